use crate::error::{Error, Result};
use crate::types::ProbabilityVector;

/// The seven race classes emitted by FairFace-style classifiers.
pub const FAIRFACE_RACES: [&str; 7] = [
    "White",
    "Southeast Asian",
    "Middle Eastern",
    "Latino_Hispanic",
    "Indian",
    "East Asian",
    "Black",
];

/// Race labels used by the labor-statistics targets, in output order.
pub const BLS_RACES: [&str; 4] = ["White", "Black", "Asian", "Hispanic"];

/// Frequencies of `labels` over `label_set`, in `label_set` order.
pub fn empirical_distribution<S: AsRef<str>, L: AsRef<str>>(
    labels: &[S],
    label_set: &[L],
) -> Result<ProbabilityVector> {
    if labels.is_empty() {
        return Err(Error::validation("no labels to count"));
    }
    let mut counts = vec![0usize; label_set.len()];
    for l in labels {
        let l = l.as_ref();
        let i = label_set
            .iter()
            .position(|s| s.as_ref() == l)
            .ok_or_else(|| Error::UnknownLabel { label: l.to_string() })?;
        counts[i] += 1;
    }
    let n = labels.len() as f64;
    ProbabilityVector::new(
        label_set.iter().map(|s| s.as_ref().to_string()).collect(),
        counts.iter().map(|&c| c as f64 / n).collect(),
    )
}

/// Collapse a distribution over the seven FairFace races onto the four
/// labor-statistics races: the two Asian classes are summed,
/// `Latino_Hispanic` becomes `Hispanic`, and `Middle Eastern`/`Indian` are
/// dropped before renormalizing.
///
/// If the input puts all mass on the dropped classes the result is
/// undefined and an error is returned.
pub fn merge_race_for_bls(p: &ProbabilityVector) -> Result<ProbabilityVector> {
    let mut mine: Vec<&str> = p.labels().iter().map(String::as_str).collect();
    let mut expected: Vec<&str> = FAIRFACE_RACES.to_vec();
    mine.sort_unstable();
    expected.sort_unstable();
    if mine != expected {
        return Err(Error::LabelMismatch {
            left: p.labels().to_vec(),
            right: FAIRFACE_RACES.iter().map(|s| s.to_string()).collect(),
        });
    }
    let get = |l: &str| p.get(l).expect("label set checked");
    let raw = [
        get("White"),
        get("Black"),
        get("Southeast Asian") + get("East Asian"),
        get("Latino_Hispanic"),
    ];
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::validation(
            "all race mass falls on classes without a labor-statistics counterpart",
        ));
    }
    ProbabilityVector::new(
        BLS_RACES.iter().map(|s| s.to_string()).collect(),
        raw.iter().map(|v| v / total).collect(),
    )
}

/// Statistical parity: the Euclidean distance between two distributions over
/// the same ordered outcomes.
pub fn statistical_parity(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64> {
    if p.labels() != q.labels() {
        return Err(Error::LabelMismatch {
            left: p.labels().to_vec(),
            right: q.labels().to_vec(),
        });
    }
    Ok(sp_values(p.values(), q.values()))
}

pub(crate) fn sp_values(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(labels: &[&str], values: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(labels.iter().map(|s| s.to_string()).collect(), values.to_vec()).unwrap()
    }

    #[test]
    fn empirical_counts() {
        let p = empirical_distribution(&["m", "m", "f", "f"], &["m", "f"]).unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);
        let p = empirical_distribution(&["m", "m", "m", "m"], &["m", "f"]).unwrap();
        assert_eq!(p.values(), &[1.0, 0.0]);
        assert!(empirical_distribution(&["x"], &["m", "f"]).is_err());
    }

    #[test]
    fn empirical_matches_counting_oracle() {
        use rand::{Rng, SeedableRng};
        let set = ["a", "b", "c"];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let labels: Vec<&str> = (0..200).map(|_| set[rng.random_range(0..3)]).collect();
        let p = empirical_distribution(&labels, &set).unwrap();
        for (i, s) in set.iter().enumerate() {
            let count = labels.iter().filter(|l| *l == s).count();
            assert_eq!(p.values()[i], count as f64 / 200.0);
        }
    }

    #[test]
    fn asian_classes_are_summed() {
        let p = pv(&FAIRFACE_RACES, &[0.2, 0.1, 0.1, 0.2, 0.0, 0.2, 0.2]);
        let m = merge_race_for_bls(&p).unwrap();
        // Asian mass 0.3 out of a retained 0.9
        assert!((m.get("Asian").unwrap() - 0.3 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn all_white() {
        let p = pv(&FAIRFACE_RACES, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(merge_race_for_bls(&p).unwrap().values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_seven_races() {
        let p = ProbabilityVector::uniform(&FAIRFACE_RACES).unwrap();
        let m = merge_race_for_bls(&p).unwrap();
        // retained mass 5/7: White 1/7, Black 1/7, Asian 2/7, Hispanic 1/7
        let want = [0.2, 0.2, 0.4, 0.2];
        for (a, b) in m.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_rejects_other_label_sets() {
        assert!(merge_race_for_bls(&pv(&["White", "Black"], &[0.5, 0.5])).is_err());
    }

    #[test]
    fn sp_examples() {
        let u = pv(&["female", "male"], &[0.5, 0.5]);
        let ceo = pv(&["female", "male"], &[0.33, 0.67]);
        assert_eq!(statistical_parity(&u, &u).unwrap(), 0.0);
        assert!((statistical_parity(&u, &ceo).unwrap() - 0.24042).abs() < 1e-4);
        let a = pv(&["x", "y"], &[1.0, 0.0]);
        let b = pv(&["x", "y"], &[0.0, 1.0]);
        assert!((statistical_parity(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(statistical_parity(&a, &u).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n)
            .prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-9)
            .prop_map(|v| {
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            })
    }

    proptest! {
        #[test]
        fn sp_is_a_bounded_metric(p in simplex(5), q in simplex(5), r in simplex(5)) {
            let d_pq = sp_values(&p, &q);
            prop_assert!((d_pq - sp_values(&q, &p)).abs() < 1e-15);
            prop_assert!(d_pq <= 2f64.sqrt() + 1e-12);
            prop_assert!(sp_values(&p, &p) == 0.0);
            prop_assert!(d_pq <= sp_values(&p, &r) + sp_values(&r, &q) + 1e-12);
        }
    }
}
