//! Named parameter collections, SGD updates, and the checkpoint encoding
//! for parameter tensors (magic "GBP1", little-endian f64 payloads).

use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"GBP1";
const VERSION: u32 = 1;

/// Ordered set of uniquely named parameter tensors. Gradients use the same
/// container so updates can be validated name-for-name, shape-for-shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<ParamSet> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Contract(format!("duplicate parameter name {name}")));
            }
        }
        Ok(ParamSet { entries })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Mutable access to two distinct entries at once (weight + bias of the
    /// same layer during backward accumulation).
    pub fn get2_mut(&mut self, a: &str, b: &str) -> Option<(&mut Tensor, &mut Tensor)> {
        let ia = self.entries.iter().position(|(n, _)| n == a)?;
        let ib = self.entries.iter().position(|(n, _)| n == b)?;
        if ia == ib {
            return None;
        }
        if ia < ib {
            let (l, r) = self.entries.split_at_mut(ib);
            Some((&mut l[ia].1, &mut r[0].1))
        } else {
            let (l, r) = self.entries.split_at_mut(ia);
            Some((&mut r[0].1, &mut l[ib].1))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names and shapes, all zeros; the natural gradient accumulator.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Contract(format!(
                "parameter sets differ in entry count ({} vs {})",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((an, at), (bn, bt)) in self.entries.iter().zip(other.entries.iter()) {
            if an != bn {
                return Err(Error::Contract(format!(
                    "parameter name mismatch: {an} vs {bn}"
                )));
            }
            if at.shape() != bt.shape() {
                return Err(Error::Contract(format!(
                    "parameter {an} shape mismatch: {:?} vs {:?}",
                    at.shape(),
                    bt.shape()
                )));
            }
        }
        Ok(())
    }

    /// In-place `p -= lr * g`.
    pub fn apply_sgd(&mut self, grads: &ParamSet, lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::Contract(format!("learning rate must be > 0, got {lr}")));
        }
        self.check_aligned(grads)?;
        for ((_, p), (_, g)) in self.entries.iter_mut().zip(grads.entries.iter()) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data().iter()) {
                *pv -= lr * gv;
            }
        }
        Ok(())
    }

    /// In-place `g += scale * other`, used to merge per-sample gradients.
    pub fn accumulate(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.check_aligned(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.entries.iter()) {
            for (av, bv) in a.data_mut().iter_mut().zip(b.data().iter()) {
                *av += scale * bv;
            }
        }
        Ok(())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (n, t) in &self.entries {
            t.check_finite(&format!("{what}.{n}"))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&MAGIC).map_err(|e| Error::io(path, e))?;
        w.write_all(&VERSION.to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        write_param_set(&mut w, self).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamSet> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, path)?;
        if magic != MAGIC {
            return Err(Error::format(path, "bad magic (not a parameter file)"));
        }
        let mut vbuf = [0u8; 4];
        read_exact(&mut r, &mut vbuf, path)?;
        let version = u32::from_le_bytes(vbuf);
        if version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported parameter file version {version}"),
            ));
        }
        read_param_set(&mut r, path)
    }
}

/// Functional SGD step: returns updated parameters, inputs untouched.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
    let mut out = params.clone();
    out.apply_sgd(grads, lr)?;
    Ok(out)
}

pub(crate) fn write_param_set(w: &mut impl Write, params: &ParamSet) -> std::io::Result<()> {
    w.write_all(&(params.entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in &params.entries {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "file truncated")
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn read_param_set(r: &mut impl Read, path: &Path) -> Result<ParamSet> {
    let mut b4 = [0u8; 4];
    read_exact(r, &mut b4, path)?;
    let count = u32::from_le_bytes(b4);
    if count > 4096 {
        return Err(Error::format(path, "implausible parameter count"));
    }
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(r, &mut b2, path)?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut nb = vec![0u8; name_len];
        read_exact(r, &mut nb, path)?;
        let name = String::from_utf8(nb)
            .map_err(|_| Error::format(path, "parameter name is not utf8"))?;
        let mut b1 = [0u8; 1];
        read_exact(r, &mut b1, path)?;
        let ndim = b1[0] as usize;
        if ndim > 8 {
            return Err(Error::format(path, "implausible tensor rank"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            read_exact(r, &mut b4, path)?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let len: usize = shape.iter().product();
        if len > (1 << 26) {
            return Err(Error::format(path, "implausible tensor size"));
        }
        let mut data = Vec::with_capacity(len);
        let mut b8 = [0u8; 8];
        for _ in 0..len {
            read_exact(r, &mut b8, path)?;
            data.push(f64::from_le_bytes(b8));
        }
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    ParamSet::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ParamSet {
        ParamSet::from_entries(vec![
            ("a.weight".into(), Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap()),
            ("a.bias".into(), Tensor::from_vec(&[1], vec![0.5]).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = ParamSet::from_entries(vec![
            ("x".into(), Tensor::zeros(&[1])),
            ("x".into(), Tensor::zeros(&[1])),
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn sgd_step_arithmetic() {
        let p = ParamSet::from_entries(vec![(
            "p".into(),
            Tensor::from_vec(&[1], vec![1.0]).unwrap(),
        )])
        .unwrap();
        let g = ParamSet::from_entries(vec![(
            "p".into(),
            Tensor::from_vec(&[1], vec![0.5]).unwrap(),
        )])
        .unwrap();
        let out = sgd_step(&p, &g, 0.1).unwrap();
        assert!((out.get("p").unwrap().data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let p = small();
        let out = sgd_step(&p, &p.zeros_like(), 0.1).unwrap();
        assert_eq!(p, out);
    }

    #[test]
    fn two_sgd_steps_on_quadratic() {
        // loss 0.5 p^2, gradient p, lr 0.1, start 1.0 -> 0.9 -> 0.81
        let mut p = 1.0f64;
        for _ in 0..2 {
            let params = ParamSet::from_entries(vec![(
                "p".into(),
                Tensor::from_vec(&[1], vec![p]).unwrap(),
            )])
            .unwrap();
            let grads = ParamSet::from_entries(vec![(
                "p".into(),
                Tensor::from_vec(&[1], vec![p]).unwrap(),
            )])
            .unwrap();
            p = sgd_step(&params, &grads, 0.1).unwrap().get("p").unwrap().data()[0];
        }
        assert!((p - 0.81).abs() < 1e-15);
    }

    #[test]
    fn misaligned_grads_are_contract_errors() {
        let p = small();
        let bad = ParamSet::from_entries(vec![(
            "other".into(),
            Tensor::zeros(&[2]),
        ), (
            "a.bias".into(),
            Tensor::zeros(&[1]),
        )])
        .unwrap();
        assert!(matches!(sgd_step(&p, &bad, 0.1), Err(Error::Contract(_))));
        let bad_shape = ParamSet::from_entries(vec![
            ("a.weight".into(), Tensor::zeros(&[3])),
            ("a.bias".into(), Tensor::zeros(&[1])),
        ])
        .unwrap();
        assert!(matches!(sgd_step(&p, &bad_shape, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.gbp");
        p.save(&path).unwrap();
        let q = ParamSet::load(&path).unwrap();
        assert_eq!(p, q);
        for ((_, a), (_, b)) in p.entries.iter().zip(q.entries.iter()) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_checkpoint_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.gbp");
        std::fs::write(&path, b"GBP1junk").unwrap();
        assert!(matches!(ParamSet::load(&path), Err(Error::Format { .. })));
    }
}
