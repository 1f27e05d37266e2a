#![no_main]

use libfuzzer_sys::fuzz_target;
use sgstereo::io::{parse_config, render_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        let text = render_config(&cfg);
        let back = parse_config(&text).expect("rendered config parses");
        assert_eq!(render_config(&back), text);
    }
});
