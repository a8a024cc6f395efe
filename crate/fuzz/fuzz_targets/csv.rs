#![no_main]

use bgk::csv_io::{parse_diagnostics, parse_table, to_csv_string};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_table(text);
    if let Ok(records) = parse_diagnostics(text) {
        let again = parse_diagnostics(&to_csv_string(&records)).expect("re-parse");
        assert_eq!(again.len(), records.len());
    }
});
