//! Flat TSV checkpoints: one `<name>\t<rows>\t<cols>\t<v,v,...>` line per
//! matrix, values row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Parameters;
use crate::error::{Error, Result};

pub fn to_tsv<P: Parameters>(params: &P, prefix: &str) -> String {
    let mut out = String::new();
    for (name, t) in params.named() {
        let values: Vec<String> = t.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{prefix}{name}\t{}\t{}\t{}\n",
            t.nrows(),
            t.ncols(),
            values.join(",")
        ));
    }
    out
}

pub fn parse_tsv(text: &str, path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err("expected 4 tab-separated columns".into()));
        }
        let rows: usize = cols[1].parse().map_err(|_| err(format!("bad rows {:?}", cols[1])))?;
        let ncols: usize = cols[2].parse().map_err(|_| err(format!("bad cols {:?}", cols[2])))?;
        let values = if cols[3].is_empty() {
            Vec::new()
        } else {
            cols[3]
                .split(',')
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(format!("bad value: {e}")))?
        };
        let m = Array2::from_shape_vec((rows, ncols), values)
            .map_err(|_| err(format!("expected {} values", rows * ncols)))?;
        out.push((cols[0].to_string(), m));
    }
    Ok(out)
}

pub fn save<P: Parameters>(params: &P, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_tsv(params, ""))?;
    Ok(())
}

/// Overwrites `params` with the matching entries of a checkpoint. Every
/// parameter must be present with the same shape.
pub fn load_into<P: Parameters>(params: &mut P, path: impl AsRef<Path>, prefix: &str) -> Result<()> {
    let path = path.as_ref();
    let entries = parse_tsv(&fs::read_to_string(path)?, path)?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let key = format!("{prefix}{name}");
        let (_, m) = entries
            .iter()
            .find(|(n, _)| *n == key)
            .ok_or_else(|| Error::param(format!("checkpoint has no entry {key:?}")))?;
        if m.dim() != slot.dim() {
            return Err(Error::shape(format!(
                "{key}: checkpoint {:?} vs model {:?}",
                m.dim(),
                slot.dim()
            )));
        }
        slot.assign(m);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LocalModel, ModelKind};
    use crate::rng::stream;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = stream(11, 0);
        for kind in [ModelKind::Gcn, ModelKind::Sgc, ModelKind::Gcnii] {
            let model = LocalModel::init(kind, 5, &mut rng);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ckpt.tsv");
            save(&model, &path).unwrap();
            let mut other = LocalModel::init(kind, 5, &mut rng);
            assert_ne!(other, model);
            load_into(&mut other, &path, "").unwrap();
            assert_eq!(other, model);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = stream(11, 0);
        let model = LocalModel::init(ModelKind::Gcn, 5, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.tsv");
        save(&model, &path).unwrap();
        let mut wider = LocalModel::init(ModelKind::Gcn, 6, &mut rng);
        assert!(load_into(&mut wider, &path, "").is_err());
    }
}
