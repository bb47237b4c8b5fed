#![no_main]

use libfuzzer_sys::fuzz_target;
use waldorf::model::checkpoint::Manifest;
use waldorf::model::ModelConfig;
use waldorf::teacher::TeacherConfig;
use waldorf::trainer::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(m) = Manifest::parse(text) else { return };
    let _ = m.read_fields(&mut ModelConfig::full_size(100));
    let _ = m.read_fields(&mut TeacherConfig::desk(100, 32));
    let _ = m.read_fields(&mut TrainConfig::desk());
    let _ = m.require::<u64>("step");
    assert_eq!(Manifest::parse(&m.render()).unwrap().render(), m.render());
});
