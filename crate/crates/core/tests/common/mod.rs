#![allow(dead_code)]

use condebias_core::rng::normal;
use condebias_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn gaussian(m: usize, d: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(vec![m, d], (0..m * d).map(|_| normal(rng)).collect()).unwrap()
}

pub fn coins(m: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..m).map(|_| usize::from(rng.random_bool(0.5))).collect()
}

/// Coins with at least `min` of each value.
pub fn coins_with_min(m: usize, min: usize, rng: &mut impl Rng) -> Vec<usize> {
    loop {
        let l = coins(m, rng);
        let ones = l.iter().sum::<usize>();
        if ones >= min && m - ones >= min {
            return l;
        }
    }
}

/// Rows of `x` permuted independently inside each label stratum.
pub fn shuffle_within(x: &Tensor, labels: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut perm: Vec<usize> = (0..labels.len()).collect();
    for value in [0, 1] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == value).collect();
        let mut shuffled = idx.clone();
        shuffled.shuffle(rng);
        for (&i, &j) in idx.iter().zip(&shuffled) {
            perm[i] = j;
        }
    }
    x.select_rows(&perm)
}

pub fn shuffle_rows(x: &Tensor, rng: &mut impl Rng) -> Tensor {
    let (m, _) = x.dims2().unwrap();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    x.select_rows(&perm)
}

/// Empirical `q` quantile (nearest rank).
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[k - 1]
}

pub fn column(values: impl IntoIterator<Item = f64>) -> Tensor {
    Tensor::column(values.into_iter().collect())
}
