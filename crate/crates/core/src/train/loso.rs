//! Leave-one-subject-out partitions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub held_out: String,
    /// Indices into the sample list.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct subject, ordered by subject id. `subjects[i]` is
/// the subject of sample `i`.
pub fn loso_folds<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<Fold>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        groups.entry(s.as_ref()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            groups.len()
        )));
    }
    Ok(groups
        .iter()
        .map(|(&held_out, test)| Fold {
            held_out: held_out.to_owned(),
            train: (0..subjects.len()).filter(|&i| subjects[i].as_ref() != held_out).collect(),
            test: test.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_subjects() {
        let folds = loso_folds(&["A", "A", "B"]).unwrap();
        assert_eq!(folds.len(), 2);
        assert_eq!(folds[1].held_out, "B");
        assert_eq!(folds[1].train, vec![0, 1]);
        assert_eq!(folds[1].test, vec![2]);
    }

    #[test]
    fn one_clip_per_subject() {
        let subjects: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
        let folds = loso_folds(&subjects).unwrap();
        assert_eq!(folds.len(), 7);
        assert!(folds.iter().all(|f| f.train.len() == 6 && f.test.len() == 1));
    }

    #[test]
    fn single_subject_is_a_protocol_error() {
        assert!(matches!(loso_folds(&["A", "A"]), Err(Error::Protocol(_))));
    }

    proptest! {
        #[test]
        fn test_sets_partition_the_dataset(ids in proptest::collection::vec(0u8..5, 2..40)) {
            let subjects: Vec<String> = ids.iter().map(|i| format!("s{i}")).collect();
            prop_assume!(ids.iter().collect::<std::collections::HashSet<_>>().len() >= 2);
            let folds = loso_folds(&subjects).unwrap();
            let mut seen = vec![0; subjects.len()];
            for f in &folds {
                for &i in &f.test {
                    seen[i] += 1;
                    prop_assert_eq!(&subjects[i], &f.held_out);
                }
                prop_assert!(f.train.iter().all(|&i| subjects[i] != f.held_out));
                prop_assert_eq!(f.train.len() + f.test.len(), subjects.len());
            }
            prop_assert!(seen.iter().all(|&n| n == 1));
        }
    }
}
