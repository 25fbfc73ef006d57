//! Dataset ingestion: feature matrices (CSV or binary), label files, and
//! optional per-column standardization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use dagc::autodiff::Tensor;
use dagc::graph::SparseAdjacency;
use dagc::{Error, Result};

/// One loaded corpus: features, optional ground truth, optional native
/// graph.
pub struct Dataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Option<Vec<i64>>,
    pub graph: Option<SparseAdjacency>,
}

impl Dataset {
    /// Read features (and labels, when given) from disk. The graph is
    /// attached separately by the caller. The dataset name is the feature
    /// file stem.
    pub fn load(
        features_path: &Path,
        labels_path: Option<&Path>,
        standardize_features: bool,
    ) -> Result<Self> {
        let mut features = read_features(features_path)?;
        if standardize_features {
            features = standardize(&features);
        }
        let labels = match labels_path {
            Some(path) => {
                let l = read_labels(path)?;
                if l.len() != features.rows() {
                    return Err(Error::Contract {
                        op: "dataset",
                        msg: format!("{} labels for {} samples", l.len(), features.rows()),
                    });
                }
                Some(l)
            }
            None => None,
        };
        let name = features_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(Dataset {
            name,
            features,
            labels,
            graph: None,
        })
    }

    pub fn attach_graph(&mut self, graph: SparseAdjacency) -> Result<()> {
        if graph.node_count() != self.features.rows() {
            return Err(Error::Contract {
                op: "dataset",
                msg: format!(
                    "graph has {} nodes for {} samples",
                    graph.node_count(),
                    self.features.rows()
                ),
            });
        }
        self.graph = Some(graph);
        Ok(())
    }
}

const DMAT_MAGIC: &[u8; 4] = b"DMAT";

/// Load features from CSV (optional header, one sample per row) or the
/// binary "DMAT" format, sniffed by magic bytes.
pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut file = File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut magic = [0u8; 4];
    let got = file.read(&mut magic).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if got == 4 && &magic == DMAT_MAGIC {
        read_dmat_body(path, file)
    } else {
        read_csv(path)
    }
}

fn read_dmat_body(path: &Path, file: File) -> Result<Tensor> {
    let mut r = BufReader::new(file);
    let io = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8).map_err(io)?;
    let rows = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8).map_err(io)?;
    let cols = u64::from_le_bytes(buf8) as usize;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 34) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!("implausible DMAT dimensions {rows}x{cols}"),
        });
    }
    let mut values = vec![0.0f64; rows * cols];
    for v in values.iter_mut() {
        r.read_exact(&mut buf8).map_err(io)?;
        *v = f64::from_le_bytes(buf8);
    }
    Tensor::new(rows, cols, values)
}

fn read_csv(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = trimmed
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect();
        match parsed {
            Ok(values) => {
                if let Some(w) = width {
                    if values.len() != w {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: lineno + 1,
                            msg: format!("expected {w} columns, found {}", values.len()),
                        });
                    }
                } else {
                    width = Some(values.len());
                }
                rows.push(values);
            }
            Err(_) if rows.is_empty() && width.is_none() => {
                // a non-numeric first line is a header
                continue;
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad number: {e}"),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "no data rows".into(),
        });
    }
    Tensor::from_rows(&rows)
}

pub fn write_features_csv(t: &Tensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    for i in 0..t.rows() {
        let line = t
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_features_dmat(t: &Tensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    w.write_all(DMAT_MAGIC).map_err(io)?;
    w.write_all(&(t.rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(t.cols() as u64).to_le_bytes()).map_err(io)?;
    for v in t.values() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One integer per line.
pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        labels.push(trimmed.parse::<i64>().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: format!("bad label: {e}"),
        })?);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "no labels".into(),
        });
    }
    Ok(labels)
}

pub fn write_labels(labels: &[i64], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    for l in labels {
        writeln!(w, "{l}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Per-column zero mean and unit variance (population). Zero-variance
/// columns are centered only.
pub fn standardize(t: &Tensor) -> Tensor {
    let (n, d) = t.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(t.row(i)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for i in 0..n {
        for (j, &v) in t.row(i).iter().enumerate() {
            let c = v - mean[j];
            var[j] += c * c;
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| {
            let s = (v / n as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut values = vec![0.0; n * d];
    for i in 0..n {
        for (j, &v) in t.row(i).iter().enumerate() {
            values[i * d + j] = (v - mean[j]) / std[j];
        }
    }
    Tensor::new(n, d, values).expect("same shape")
}
