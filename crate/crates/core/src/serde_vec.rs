//! Serialize nalgebra column vectors as plain sequences so that they read
//! naturally in text formats.

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}
