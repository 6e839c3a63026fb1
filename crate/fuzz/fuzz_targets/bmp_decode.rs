#![no_main]

use libfuzzer_sys::fuzz_target;
use patchrbm::dataset::bmp;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = bmp::decode(data) {
        assert_eq!(img.data.len(), img.width * img.height);
        let again = bmp::decode(&bmp::encode(&img)).expect("re-encoded image decodes");
        assert_eq!(again, img);
    }
});
