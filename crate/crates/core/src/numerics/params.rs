use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Half-width of the uniform initialization range.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat named collection of learnable arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on duplicate names: layouts are built by code, not data.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = self.tensors.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    /// Registers a parameter drawn uniformly from `[-INIT_RANGE, INIT_RANGE]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        let tensor = Tensor::new(shape.to_vec(), data).expect("shape product matches");
        self.insert(name, tensor)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    /// Like [`ModelParams::id`] but reports a missing name as a checkpoint error.
    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero gradients laid out like these parameters.
    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    /// `self += alpha * grads`, elementwise per parameter.
    pub fn axpy(&mut self, alpha: f64, grads: &Gradients) -> Result<()> {
        self.check_layout(grads)?;
        for (p, g) in self.tensors.iter_mut().zip(&grads.tensors) {
            p.axpy(alpha, g)?;
        }
        Ok(())
    }

    pub(crate) fn check_layout(&self, grads: &Gradients) -> Result<()> {
        if grads.tensors.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.tensors.len(),
                self.tensors.len()
            )));
        }
        for (i, (p, g)) in self.tensors.iter().zip(&grads.tensors).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{}` has shape {:?}, parameter has {:?}",
                    self.names[i],
                    g.shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Writes `<stem>.bin` (packed little-endian f64) and `<stem>.manifest`
    /// (one `name<TAB>shape<TAB>byte offset` line per array).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (bin_path, manifest_path) = checkpoint_paths(stem);
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        let mut manifest = String::from("# ctxparse params v1\n");
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            let shape = tensor
                .shape()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x");
            writeln!(manifest, "{name}\t{shape}\t{}", bytes.len()).unwrap();
            for v in tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(&bin_path, &bytes).map_err(|e| Error::io(&bin_path, e))?;
        fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (bin_path, manifest_path) = checkpoint_paths(stem);
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let manifest =
            fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut params = ModelParams::new();
        for (lineno, line) in manifest.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| {
                Error::Checkpoint(format!(
                    "{}:{}: {what}",
                    manifest_path.display(),
                    lineno + 1
                ))
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad("expected name, shape, offset"));
            }
            let shape = fields[1]
                .split('x')
                .map(str::parse::<usize>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("bad shape"))?;
            let offset: usize = fields[2].parse().map_err(|_| bad("bad offset"))?;
            let n: usize = shape.iter().product();
            let end = offset + n * 8;
            if end > bytes.len() {
                return Err(bad("array extends past end of data file"));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if params.lookup.contains_key(fields[0]) {
                return Err(bad("duplicate parameter name"));
            }
            params.insert(fields[0], Tensor::new(shape, data)?);
        }
        Ok(params)
    }
}

fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("manifest"))
}

/// Gradients aligned index-for-index with a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), t))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Gradients) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape("gradient layouts differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub(crate) fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }
}
