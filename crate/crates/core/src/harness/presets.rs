pub const PRESET_NAMES: [&str; 4] = ["example1", "example2", "example3", "example4"];

/// Shipped configuration text for a preset name.
pub fn preset(name: &str) -> Option<&'static str> {
    Some(match name {
        "example1" => include_str!("../../presets/example1.cfg"),
        "example2" => include_str!("../../presets/example2.cfg"),
        "example3" => include_str!("../../presets/example3.cfg"),
        "example4" => include_str!("../../presets/example4.cfg"),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::super::ExperimentConfig;
    use super::*;

    #[test]
    fn every_preset_parses() {
        for name in PRESET_NAMES {
            let cfg = ExperimentConfig::parse(preset(name).unwrap())
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(cfg.steps().unwrap() > 0);
        }
        assert!(preset("example5").is_none());
    }
}
