#![no_main]

use libfuzzer_sys::fuzz_target;
use patchrbm::container::Container;
use patchrbm::model::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        let bytes = c.encode();
        assert_eq!(Container::decode(&bytes).expect("round trip"), c);
        let _ = Model::from_container(&c);
    }
});
