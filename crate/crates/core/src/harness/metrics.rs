use std::fmt::Write as _;

use crate::neuralnet::{LabeledSample, MlpModel, NetError};

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n: n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(n_classes);
        for (t, p) in pairs {
            m.record(t, p);
        }
        m
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.n + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    /// Percentage of correct predictions; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.correct() as f64 / t as f64,
        }
    }

    pub fn to_text(&self, class_names: &[String]) -> String {
        let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let width = (0..self.n).map(|i| name(i).len()).chain([4]).max().unwrap() + 1;
        let mut s = format!("{:>width$}", "t\\p");
        for j in 0..self.n {
            write!(s, "{:>width$}", name(j)).unwrap();
        }
        s.push('\n');
        for i in 0..self.n {
            write!(s, "{:>width$}", name(i)).unwrap();
            for j in 0..self.n {
                write!(s, "{:>width$}", self.get(i, j)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.counts.chunks(self.n).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(model: &MlpModel, data: &[LabeledSample]) -> Result<Evaluation, NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyData);
    }
    let n = model.layout().n_out;
    let mut confusion = ConfusionMatrix::new(n);
    for s in data {
        if s.label >= n {
            return Err(NetError::Shape(format!("label {} >= {n}", s.label)));
        }
        confusion.record(s.label, model.predict(&s.features)?);
    }
    Ok(Evaluation { accuracy: confusion.accuracy(), confusion })
}
