#![no_main]

use functok::harness::cli::CliConfig;
use functok::trajectory::TemplateTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: &str| {
    if let Ok(cfg) = CliConfig::from_toml(input) {
        cfg.validate().unwrap();
    }
    if let Ok(t) = TemplateTable::from_json(input) {
        for kind in functok::FunctionalKind::ALL {
            let _ = t.render_transition(kind, 0);
        }
    }
});
