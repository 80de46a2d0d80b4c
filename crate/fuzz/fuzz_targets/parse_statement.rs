#![no_main]

use libfuzzer_sys::fuzz_target;
use repsim_core::minisql::{parse, render};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    match parse(text) {
        Ok(stmt) => {
            let canonical = render(&stmt);
            let again = parse(&canonical).expect("rendered statement parses");
            assert_eq!(again, stmt, "{canonical}");
        }
        Err(e) => assert!(e.offset <= text.len(), "offset {} past end of {} bytes", e.offset, text.len()),
    }
});
