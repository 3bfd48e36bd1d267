use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `n_test` distinct indices out of `0..len`, in draw order.
pub fn draw_test<R: Rng + ?Sized>(len: usize, n_test: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n_test > len {
        return Err(Error::InsufficientSamples {
            requested: n_test,
            available: len,
        });
    }
    Ok(sample(rng, len, n_test).into_vec())
}

/// `n_train` distinct indices out of `0..len` that avoid `test`.
pub fn draw_train<R: Rng + ?Sized>(len: usize, n_train: usize, test: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let mut excluded = vec![false; len];
    for &i in test {
        if i < len {
            excluded[i] = true;
        }
    }
    let pool: Vec<usize> = (0..len).filter(|&i| !excluded[i]).collect();
    if n_train > pool.len() {
        return Err(Error::InsufficientSamples {
            requested: n_train + test.len(),
            available: len,
        });
    }
    Ok(sample(rng, pool.len(), n_train).into_iter().map(|k| pool[k]).collect())
}

/// Disjoint uniform train/test index sets; the test set is drawn first.
pub fn split<R: Rng + ?Sized>(dataset: &Dataset, n_train: usize, n_test: usize, rng: &mut R) -> Result<Split> {
    let len = dataset.len();
    if n_train + n_test > len {
        return Err(Error::InsufficientSamples {
            requested: n_train + n_test,
            available: len,
        });
    }
    let test = draw_test(len, n_test, rng)?;
    let train = draw_train(len, n_train, &test, rng)?;
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NoiseSpec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dummy(n: usize) -> Dataset {
        Dataset {
            model_hash: String::new(),
            seed: 0,
            noise: NoiseSpec::NONE,
            samples: vec![
                crate::dataset::PoseSample {
                    target: [0.0; 3],
                    theta: vec![0.0; 20],
                    la_position: [0.0; 3],
                    ra_position: [0.0; 3],
                    contact_noise: [0.0; 3],
                    observations: vec![],
                };
                n
            ],
        }
    }

    #[test]
    fn sizes() {
        let d = dummy(5055);
        let s = split(&d, 10, 300, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (10, 300));
        let e = split(&dummy(1), 0, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(e.train.is_empty() && e.test.len() == 1);
        assert!(matches!(
            split(&dummy(3), 2, 2, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InsufficientSamples {
                requested: 4,
                available: 3
            })
        ));
    }

    proptest! {
        #[test]
        fn disjoint_and_deterministic(len in 0usize..200, a in 0usize..100, b in 0usize..100, seed: u64) {
            prop_assume!(a + b <= len);
            let d = dummy(len);
            let s1 = split(&d, a, b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let s2 = split(&d, a, b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&s1, &s2);
            prop_assert!(s1.train.iter().all(|i| !s1.test.contains(i) && *i < len));
            let mut all: Vec<usize> = s1.train.iter().chain(&s1.test).copied().collect();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), a + b);
        }
    }
}
