#![allow(dead_code)]

use synctrack_core::netmodel::{Case, CaseDocument};

pub const SMIB: &str = include_str!("../../../synctrack/cases/smib.json");
pub const TWO_MACHINE: &str = include_str!("../../../synctrack/cases/two_machine.json");
pub const NINEBUS: &str = include_str!("../../../synctrack/cases/ninebus.json");

pub fn case(text: &str) -> Case {
    let doc: CaseDocument = serde_json::from_str(text).expect("case json");
    Case::from_document(&doc).expect("valid case")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
