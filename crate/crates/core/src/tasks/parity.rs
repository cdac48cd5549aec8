use rand::Rng;

/// `L` random signs and the sign of every prefix product.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityInstance {
    pub values: Vec<i8>,
    pub targets: Vec<i8>,
}

impl ParityInstance {
    /// Class labels: 0 for an even number of `−1`s so far, 1 for odd.
    pub fn labels(&self) -> Vec<usize> {
        self.targets.iter().map(|&t| usize::from(t < 0)).collect()
    }
}

/// Prefix-product signs of a `±1` sequence.
pub fn parity_oracle(values: &[i8]) -> Vec<i8> {
    values
        .iter()
        .scan(1i8, |acc, &v| {
            *acc *= v.signum();
            Some(*acc)
        })
        .collect()
}

pub fn parity_generate<R: Rng + ?Sized>(length: usize, rng: &mut R) -> ParityInstance {
    let values: Vec<i8> = (0..length).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let targets = parity_oracle(&values);
    ParityInstance { values, targets }
}
