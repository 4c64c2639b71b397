//! Serde adapters writing non-finite floats as `null` and reading `null`
//! back as NaN, for formats without NaN (JSON).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    v.is_finite().then_some(*v).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::NAN))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    #[derive(serde::Serialize, serde::Deserialize)]
    struct R {
        #[serde(with = "super")]
        a: f64,
        #[serde(with = "super::vec")]
        b: Vec<f64>,
    }

    #[test]
    fn non_finite_round_trips_as_nan() {
        let r = R {
            a: f64::INFINITY,
            b: vec![1.5, f64::NAN],
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"a":null,"b":[1.5,null]}"#);
        let back: R = serde_json::from_str(&s).unwrap();
        assert!(back.a.is_nan() && back.b[0] == 1.5 && back.b[1].is_nan());
    }
}
