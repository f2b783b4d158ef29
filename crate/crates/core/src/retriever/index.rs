use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::Retriever;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::numerics::ModelParams;
use crate::vmf::{c_kappa, LatentCode};

const MANIFEST_HEADER: &str = "# ctxparse index v1";

/// Which halves of the latent code enter the distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceMode {
    /// `C_κ (‖Δμ_x‖² + ‖Δμ_c‖²)`
    ContextAware,
    /// `C_κ ‖Δμ_x‖²`
    UtteranceOnly,
}

/// Mean-direction codes of indexed examples, one packed `[μ_x; μ_c]` row each.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<usize>,
    rows: Vec<f64>,
    latent: usize,
    kappa: f64,
}

impl RetrievalIndex {
    pub fn new(latent: usize, kappa: f64) -> Self {
        Self {
            ids: Vec::new(),
            rows: Vec::new(),
            latent,
            kappa,
        }
    }

    pub fn build(
        retriever: &Retriever,
        params: &ModelParams,
        examples: &[Example],
    ) -> Result<Self> {
        let mut index = Self::new(retriever.config.latent, retriever.config.kappa);
        for ex in examples {
            index.push(ex.id, &retriever.latent_code(params, ex)?)?;
        }
        Ok(index)
    }

    pub fn push(&mut self, id: usize, code: &LatentCode) -> Result<()> {
        if code.dim() != self.latent || code.mu_c.len() != self.latent {
            return Err(Error::Shape(format!(
                "code of dimension {} for an index of {}",
                code.dim(),
                self.latent
            )));
        }
        if code.kappa != self.kappa {
            return Err(Error::InvalidArgument(format!(
                "kappa {} differs from the index's {}",
                code.kappa, self.kappa
            )));
        }
        if self.ids.contains(&id) {
            return Err(Error::InvalidArgument(format!("id {id} already indexed")));
        }
        self.ids.push(id);
        self.rows.extend(code.concat());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.contains(&id)
    }

    /// Packed `[μ_x; μ_c]` row of the `i`-th indexed example.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * 2 * self.latent..(i + 1) * 2 * self.latent]
    }

    pub fn code(&self, i: usize) -> LatentCode {
        let r = self.row(i);
        LatentCode {
            mu_x: r[..self.latent].to_vec(),
            mu_c: r[self.latent..].to_vec(),
            kappa: self.kappa,
        }
    }

    /// The `k` nearest indexed examples as `(id, distance)`, ascending by
    /// distance and then id. `exclude` drops one id (the query itself).
    pub fn query(
        &self,
        code: &LatentCode,
        k: usize,
        exclude: Option<usize>,
        mode: DistanceMode,
    ) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(Error::Empty("retrieval index"));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if code.dim() != self.latent || code.mu_c.len() != self.latent {
            return Err(Error::Shape(
                "query code dimension differs from the index".into(),
            ));
        }
        if code.kappa != self.kappa {
            return Err(Error::InvalidArgument(
                "query kappa differs from the index".into(),
            ));
        }
        let ck = c_kappa(self.latent, self.kappa)?;
        let q = code.concat();
        let width = match mode {
            DistanceMode::ContextAware => 2 * self.latent,
            DistanceMode::UtteranceOnly => self.latent,
        };
        let mut scored: Vec<(usize, f64)> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(_, id)| Some(**id) != exclude)
            .map(|(i, id)| {
                let r = &self.row(i)[..width];
                let d: f64 = r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (*id, ck * d)
            })
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Writes `<stem>.manifest` and `<stem>.bin` (little-endian f64 rows).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut m = String::new();
        writeln!(m, "{MANIFEST_HEADER}").unwrap();
        writeln!(m, "rows\t{}", self.len()).unwrap();
        writeln!(m, "latent\t{}", self.latent).unwrap();
        writeln!(m, "kappa\t{}", self.kappa).unwrap();
        let ids: Vec<String> = self.ids.iter().map(usize::to_string).collect();
        writeln!(m, "ids\t{}", ids.join(" ")).unwrap();
        let mpath = stem.with_extension("manifest");
        std::fs::write(&mpath, m).map_err(|e| Error::io(&mpath, e))?;
        let bytes: Vec<u8> = self.rows.iter().flat_map(|v| v.to_le_bytes()).collect();
        let bpath = stem.with_extension("bin");
        std::fs::write(&bpath, bytes).map_err(|e| Error::io(&bpath, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let mpath = stem.with_extension("manifest");
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", mpath.display()));
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(bad("not an index manifest"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated manifest"))?;
            let (k, v) = line.split_once('\t').unwrap_or((line, ""));
            if k != name {
                return Err(bad(&format!("expected field `{name}`")));
            }
            Ok(v.to_string())
        };
        let rows: usize = field("rows")?.parse().map_err(|_| bad("bad row count"))?;
        let latent: usize = field("latent")?
            .parse()
            .map_err(|_| bad("bad latent size"))?;
        let kappa: f64 = field("kappa")?.parse().map_err(|_| bad("bad kappa"))?;
        let ids: Vec<usize> = field("ids")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("bad id")))
            .collect::<Result<_>>()?;
        if ids.len() != rows || ids.iter().collect::<HashSet<_>>().len() != rows {
            return Err(bad("ids do not match the row count or repeat"));
        }
        let bpath = stem.with_extension("bin");
        let bytes = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        if bytes.len() != rows * 2 * latent * 8 {
            return Err(bad("binary size does not match the manifest"));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            ids,
            rows: data,
            latent,
            kappa,
        })
    }
}
