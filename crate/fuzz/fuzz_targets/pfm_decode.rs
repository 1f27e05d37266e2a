#![no_main]

use libfuzzer_sys::fuzz_target;
use sgstereo::io::{decode_pfm, encode_pfm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pfm(data) {
        assert_eq!(img.data.len(), img.width * img.height);
        let again = decode_pfm(&encode_pfm(&img)).expect("re-encoded image decodes");
        assert_eq!((again.width, again.height), (img.width, img.height));
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&again.data), bits(&img.data));
    }
});
