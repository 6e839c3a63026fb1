#![no_main]

use libfuzzer_sys::fuzz_target;
use patchrbm::dump::DescriptorDump;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(dump) = DescriptorDump::parse(text) {
            let again = DescriptorDump::parse(&dump.to_text()).expect("re-serialized dump parses");
            assert_eq!(again.descriptors.len(), dump.descriptors.len());
        }
    }
});
