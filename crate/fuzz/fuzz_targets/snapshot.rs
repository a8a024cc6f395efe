#![no_main]

use bgk::snapshot::{decode_warm_start, encode_warm_start, Snapshot};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(snap) = Snapshot::decode(data) {
        assert_eq!(snap.encode(), data);
    }
    if let Ok(params) = decode_warm_start(data) {
        assert_eq!(encode_warm_start(&params), data);
    }
});
