//! Reference scoring functions. Higher is better for both.

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    TransE { p: u8 },
    DistMult,
}

fn check<T>(
    op: &'static str,
    a: &ArrayView1<T>,
    b: &ArrayView1<T>,
    c: &ArrayView1<T>,
) -> Result<()> {
    if a.len() != b.len() || b.len() != c.len() {
        return Err(Error::shape(
            op,
            format!("widths {}, {}, {}", a.len(), b.len(), c.len()),
        ));
    }
    Ok(())
}

/// `-‖s + r - o‖_p` for `p` in {1, 2}.
pub fn transe_score<T: Real>(
    subject: ArrayView1<T>,
    relation: ArrayView1<T>,
    object: ArrayView1<T>,
    p: u8,
) -> Result<T> {
    check("transe_score", &subject, &relation, &object)?;
    let diffs = subject
        .iter()
        .zip(relation.iter())
        .zip(object.iter())
        .map(|((&s, &r), &o)| s + r - o);
    let d = match p {
        1 => diffs.map(|x| x.abs()).sum::<T>(),
        2 => diffs.map(|x| x * x).sum::<T>().sqrt(),
        _ => return Err(Error::Invalid(format!("p-norm must be 1 or 2, got {p}"))),
    };
    Ok(-d)
}

/// Trilinear product `sum_k s_k r_k o_k`.
pub fn distmult_score<T: Real>(
    subject: ArrayView1<T>,
    relation: ArrayView1<T>,
    object: ArrayView1<T>,
) -> Result<T> {
    check("distmult_score", &subject, &relation, &object)?;
    Ok(subject
        .iter()
        .zip(relation.iter())
        .zip(object.iter())
        .map(|((&s, &r), &o)| s * r * o)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn transe_examples() {
        let s = array![0.0, 0.0];
        let r = array![1.0, 2.0];
        assert_eq!(
            transe_score(s.view(), r.view(), array![1.0, 2.0].view(), 2).unwrap(),
            0.0
        );
        let o = array![4.0, 6.0];
        assert_eq!(transe_score(s.view(), r.view(), o.view(), 2).unwrap(), -5.0);
        assert_eq!(transe_score(s.view(), r.view(), o.view(), 1).unwrap(), -7.0);
        assert!(transe_score(s.view(), r.view(), o.view(), 3).is_err());
    }

    #[test]
    fn distmult_examples() {
        let v = distmult_score(
            array![1.0, 2.0].view(),
            array![1.0, 1.0].view(),
            array![3.0, 1.0].view(),
        );
        assert_eq!(v.unwrap(), 5.0);
        let z = Array1::<f64>::zeros(2);
        assert_eq!(
            distmult_score(z.view(), array![1.0, 1.0].view(), array![3.0, 1.0].view()).unwrap(),
            0.0
        );
        assert!(distmult_score(z.view(), array![1.0].view(), z.view()).is_err());
    }

    proptest! {
        #[test]
        fn distmult_symmetric(v in prop::collection::vec(-5.0f64..5.0, 12)) {
            let s = Array1::from(v[0..4].to_vec());
            let r = Array1::from(v[4..8].to_vec());
            let o = Array1::from(v[8..12].to_vec());
            let a = distmult_score(s.view(), r.view(), o.view()).unwrap();
            let b = distmult_score(o.view(), r.view(), s.view()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn distmult_unit_relation_is_dot(v in prop::collection::vec(-5.0f64..5.0, 8)) {
            let s = Array1::from(v[0..4].to_vec());
            let o = Array1::from(v[4..8].to_vec());
            let a = distmult_score(s.view(), Array1::ones(4).view(), o.view()).unwrap();
            prop_assert!((a - s.dot(&o)).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn transe_max_iff_translation(v in prop::collection::vec(-5.0f64..5.0, 12), p in 1u8..=2) {
            let s = Array1::from(v[0..4].to_vec());
            let r = Array1::from(v[4..8].to_vec());
            let o = Array1::from(v[8..12].to_vec());
            let exact = &s + &r;
            prop_assert_eq!(transe_score(s.view(), r.view(), exact.view(), p).unwrap(), 0.0);
            let sc = transe_score(s.view(), r.view(), o.view(), p).unwrap();
            prop_assert!(sc <= 0.0);
            if sc == 0.0 {
                prop_assert_eq!(o, exact);
            }
        }
    }
}
