//! Experiment files bundled into the binary, one per panel of the
//! two-feature simulation.

pub const PRESETS: &[(&str, &str)] = &[
    ("appendix_d1_fedavg", include_str!("../presets/appendix_d1_fedavg.toml")),
    (
        "appendix_d1_invariant",
        include_str!("../presets/appendix_d1_invariant.toml"),
    ),
    (
        "appendix_d1_and_mask",
        include_str!("../presets/appendix_d1_and_mask.toml"),
    ),
    (
        "appendix_d1_trimmed_mean",
        include_str!("../presets/appendix_d1_trimmed_mean.toml"),
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentFile;

    #[test]
    fn every_preset_validates() {
        for (name, src) in PRESETS {
            let f = ExperimentFile::load(src, None, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(
                f.output.dir.as_deref(),
                Some(std::path::Path::new(&format!("runs/{name}")))
            );
            assert_eq!(ExperimentFile::load(&f.to_toml(), None, &[]).unwrap(), f);
        }
        assert!(preset("appendix_d1_invariant").is_some());
        assert!(preset("nope").is_none());
    }
}
