#![no_main]

use libfuzzer_sys::fuzz_target;
use repsim_core::scenario::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mut scn) = Scenario::parse(text) else {
        return;
    };
    // Keep runs short; parsing is the target, building and a brief run
    // catch validation gaps.
    scn.max_ticks = scn.max_ticks.min(2000);
    let _ = scn.run();
});
