use std::path::Path;

use ldacs_lab::experiment::ExperimentPlan;
use ldacs_lab::filter_design::FilterSpec;

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut plans = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "filter.toml" {
            let spec: FilterSpec = toml::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            spec.validate().unwrap();
        } else {
            ExperimentPlan::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            plans += 1;
        }
    }
    assert!(plans >= 4);
}
