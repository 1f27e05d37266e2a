#![no_main]

use libfuzzer_sys::fuzz_target;
use sgstereo::io::decode_pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        assert_eq!(img.data.len(), img.width * img.height);
        assert!(img.data.iter().all(|v| *v <= img.maxval));
    }
});
