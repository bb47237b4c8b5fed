#![no_main]

use libfuzzer_sys::fuzz_target;
use waldorf::model::checkpoint::{decode_f64s, encode_f64s};

fuzz_target!(|data: &[u8]| {
    match decode_f64s(data) {
        Ok(values) => assert_eq!(encode_f64s(&values), data),
        Err(_) => assert!(data.len() % 8 != 0),
    }
});
