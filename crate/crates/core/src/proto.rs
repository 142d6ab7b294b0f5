//! Class prototypes and nearest-class-mean classification.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::{squared_distance, Tensor};

/// Rows per forward pass when embedding a whole dataset.
pub(crate) const EMBED_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub vector: Vec<f32>,
    /// Task in which the class was first seen.
    pub introduced: usize,
    /// Task of the most recent computation or compensation.
    pub last_updated: usize,
}

/// Per-class mean embeddings, keyed and iterated by ascending class id.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    feature_dim: usize,
    entries: BTreeMap<usize, Prototype>,
}

impl PrototypeStore {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, class: usize) -> Option<&Prototype> {
        self.entries.get(&class)
    }

    pub fn vector(&self, class: usize) -> Option<&[f32]> {
        self.entries.get(&class).map(|p| p.vector.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Prototype)> {
        self.entries.iter().map(|(&c, p)| (c, p))
    }

    /// Inserts or replaces a prototype.
    pub fn insert(
        &mut self,
        class: usize,
        vector: Vec<f32>,
        introduced: usize,
        last_updated: usize,
    ) -> Result<()> {
        if vector.len() != self.feature_dim {
            return Err(Error::Dimension {
                context: "prototype",
                expected: self.feature_dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("prototype"));
        }
        self.entries.insert(
            class,
            Prototype {
                vector,
                introduced,
                last_updated,
            },
        );
        Ok(())
    }

    /// Adds every entry of `other`, replacing duplicates.
    pub fn merge(&mut self, other: PrototypeStore) -> Result<()> {
        for (c, p) in other.entries {
            self.insert(c, p.vector, p.introduced, p.last_updated)?;
        }
        Ok(())
    }

    /// Store restricted to the classes introduced before `task`.
    pub fn introduced_before(&self, task: usize) -> Self {
        Self {
            feature_dim: self.feature_dim,
            entries: self
                .entries
                .iter()
                .filter(|(_, p)| p.introduced < task)
                .map(|(&c, p)| (c, p.clone()))
                .collect(),
        }
    }

    /// Prototypes as an `(n × d)` tensor in class order.
    pub fn as_tensor(&self) -> Result<Tensor> {
        let data = self
            .entries
            .values()
            .flat_map(|p| p.vector.iter().copied())
            .collect();
        Tensor::matrix(self.entries.len(), self.feature_dim, data)
    }

    /// CSV dump: `class_id,task,v_0,..,v_{d-1}` with `task` the last update.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        write!(out, "class_id,task").expect("vec write");
        for j in 0..self.feature_dim {
            write!(out, ",v_{j}").expect("vec write");
        }
        out.push(b'\n');
        for (c, p) in &self.entries {
            write!(out, "{c},{}", p.last_updated).expect("vec write");
            for v in &p.vector {
                write!(out, ",{v}").expect("vec write");
            }
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Embeds a dataset in bounded chunks; row order is preserved.
pub fn embed(net: &Network, samples: &Tensor) -> Result<Tensor> {
    let n = samples.batch_size();
    if n <= EMBED_CHUNK {
        return net.forward_features(samples);
    }
    let mut data = Vec::with_capacity(n * net.feature_dim());
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EMBED_CHUNK) {
        let part = net.forward_features(&samples.select_rows(chunk)?)?;
        data.extend_from_slice(part.data());
    }
    Tensor::matrix(n, net.feature_dim(), data)
}

/// Per-class means of `features` rows, accumulated in `f64` in row order.
pub(crate) fn class_means(features: &Tensor, labels: &[usize]) -> BTreeMap<usize, Vec<f64>> {
    let d = features.row_len();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (row, &y) in features.rows().zip(labels) {
        let (acc, count) = sums.entry(y).or_insert_with(|| (vec![0.0; d], 0));
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
        *count += 1;
    }
    sums.into_iter()
        .map(|(c, (acc, count))| (c, acc.into_iter().map(|v| v / count as f64).collect()))
        .collect()
}

/// Mean embedding of every class present in `data` under `net`, stamped
/// with `task` as both introduction and update task.
pub fn compute_prototypes(
    net: &Network,
    data: &LabeledDataset,
    task: usize,
) -> Result<PrototypeStore> {
    if data.is_empty() {
        return Err(Error::EmptyTask);
    }
    let feats = embed(net, data.samples())?;
    let mut store = PrototypeStore::new(net.feature_dim());
    for (c, mean) in class_means(&feats, data.labels()) {
        store.insert(c, mean.into_iter().map(|v| v as f32).collect(), task, task)?;
    }
    Ok(store)
}

/// Class of the L2-nearest prototype; the smallest class id wins ties.
pub fn ncm_classify(embedding: &[f32], store: &PrototypeStore) -> Result<usize> {
    if embedding.len() != store.feature_dim {
        return Err(Error::Dimension {
            context: "ncm query",
            expected: store.feature_dim,
            actual: embedding.len(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (&c, p) in &store.entries {
        let d = squared_distance(embedding, &p.vector);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((c, d)),
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Evaluation("prototype store is empty".into()))
}

/// NCM prediction for every row of a feature tensor.
pub fn ncm_predict(features: &Tensor, store: &PrototypeStore) -> Result<Vec<usize>> {
    features.rows().map(|f| ncm_classify(f, store)).collect()
}

/// Fraction of samples whose nearest prototype matches their label.
pub fn classify_dataset(
    net: &Network,
    store: &PrototypeStore,
    data: &LabeledDataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyTask);
    }
    let feats = embed(net, data.samples())?;
    let preds = ncm_predict(&feats, store)?;
    let correct = preds
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Dense, Layer};

    fn identity_net(d: usize) -> Network {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Network::from_layers(
            vec![d],
            vec![Layer::Dense(Dense::new(d, d, w, vec![0.0; d]).unwrap())],
        )
        .unwrap()
    }

    fn dataset(rows: &[[f32; 2]], labels: &[usize]) -> LabeledDataset {
        let data = rows.iter().flatten().copied().collect();
        LabeledDataset::new(
            Tensor::matrix(rows.len(), 2, data).unwrap(),
            labels.to_vec(),
            (-100.0, 100.0),
        )
        .unwrap()
    }

    #[test]
    fn mean_of_two_points() {
        let d = dataset(&[[0.0, 0.0], [2.0, 2.0]], &[0, 0]);
        let s = compute_prototypes(&identity_net(2), &d, 0).unwrap();
        assert_eq!(s.vector(0).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn single_sample_prototype_is_its_embedding() {
        let d = dataset(&[[0.5, -3.0], [7.0, 1.0]], &[4, 9]);
        let s = compute_prototypes(&identity_net(2), &d, 2).unwrap();
        assert_eq!(s.vector(4).unwrap(), &[0.5, -3.0]);
        assert_eq!(s.vector(9).unwrap(), &[7.0, 1.0]);
        assert_eq!(s.get(9).unwrap().introduced, 2);
    }

    #[test]
    fn exact_match_and_tie_rule() {
        let mut s = PrototypeStore::new(2);
        s.insert(3, vec![1.0, 0.0], 0, 0).unwrap();
        s.insert(1, vec![-1.0, 0.0], 0, 0).unwrap();
        assert_eq!(ncm_classify(&[1.0, 0.0], &s).unwrap(), 3);
        assert_eq!(ncm_classify(&[0.0, 5.0], &s).unwrap(), 1);
    }

    #[test]
    fn dimension_and_empty_errors() {
        let s = PrototypeStore::new(2);
        assert!(matches!(
            ncm_classify(&[0.0], &s),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            ncm_classify(&[0.0, 0.0], &s),
            Err(Error::Evaluation(_))
        ));
        let mut s = PrototypeStore::new(2);
        assert!(s.insert(0, vec![f32::NAN, 0.0], 0, 0).is_err());
    }

    #[test]
    fn single_class_accuracy_is_its_frequency() {
        let d = dataset(
            &[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]],
            &[0, 1, 1, 1],
        );
        let mut s = PrototypeStore::new(2);
        s.insert(1, vec![0.0, 0.0], 0, 0).unwrap();
        assert_eq!(classify_dataset(&identity_net(2), &s, &d).unwrap(), 0.75);
    }

    #[test]
    fn chunked_embedding_matches_single_pass() {
        let n = EMBED_CHUNK + 37;
        let data: Vec<f32> = (0..n * 2).map(|i| (i % 17) as f32 - 8.0).collect();
        let x = Tensor::matrix(n, 2, data).unwrap();
        let net = identity_net(2);
        assert_eq!(embed(&net, &x).unwrap(), net.forward_features(&x).unwrap());
    }

    #[test]
    fn csv_dump_has_constant_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut s = PrototypeStore::new(3);
        s.insert(0, vec![1.0, 2.0, 3.0], 0, 1).unwrap();
        s.insert(5, vec![0.5, 0.0, -1.0], 1, 1).unwrap();
        s.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let widths: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
        assert_eq!(widths, vec![5, 5, 5]);
        assert!(text.starts_with("class_id,task,v_0"));
    }
}
