use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsystem {
    pub label: String,
    pub dim: usize,
}

impl Subsystem {
    pub fn new(label: impl Into<String>, dim: usize) -> Self {
        Self {
            label: label.into(),
            dim,
        }
    }
}

/// Linear map stored column by column: `columns[i]` lists the non-zero
/// `(row, value)` entries of the image of basis vector `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    rows: usize,
    columns: Vec<Vec<(usize, Complex64)>>,
}

impl SparseMap {
    pub fn new(rows: usize, columns: Vec<Vec<(usize, Complex64)>>) -> Self {
        Self { rows, columns }
    }

    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let columns = (0..m.ncols())
            .map(|j| {
                (0..m.nrows())
                    .filter(|&i| m[(i, j)] != Complex64::new(0.0, 0.0))
                    .map(|i| (i, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self {
            rows: m.nrows(),
            columns,
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.rows, self.columns.len());
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Pure(DVector<Complex64>),
    Mixed(DMatrix<Complex64>),
}

/// Multipartite state over labelled subsystems. The first subsystem is the
/// most significant index of the flattened vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    systems: Vec<Subsystem>,
    repr: Repr,
}

fn digits(mut idx: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = idx % dims[k];
        idx /= dims[k];
    }
}

fn compose(ds: impl Iterator<Item = (usize, usize)>) -> usize {
    ds.fold(0, |acc, (d, dim)| acc * dim + d)
}

impl JointState {
    /// Tensor product of the given factors, in order.
    pub fn product(parts: Vec<(Subsystem, DVector<Complex64>)>) -> Result<Self> {
        let mut systems = Vec::with_capacity(parts.len());
        let mut amps = DVector::from_element(1, Complex64::new(1.0, 0.0));
        for (sys, v) in parts {
            if v.len() != sys.dim {
                return Err(Error::Subsystem(format!(
                    "subsystem `{}` has dim {} but {} amplitudes",
                    sys.label,
                    sys.dim,
                    v.len()
                )));
            }
            amps = amps.kronecker(&v);
            systems.push(sys);
        }
        Self::from_parts(systems, amps)
    }

    pub fn from_parts(systems: Vec<Subsystem>, amplitudes: DVector<Complex64>) -> Result<Self> {
        Self::check_labels(&systems)?;
        let total: usize = systems.iter().map(|s| s.dim).product();
        if total != amplitudes.len() {
            return Err(Error::Subsystem(format!(
                "dimension mismatch: {total} vs {} amplitudes",
                amplitudes.len()
            )));
        }
        Ok(Self {
            systems,
            repr: Repr::Pure(amplitudes),
        })
    }

    fn check_labels(systems: &[Subsystem]) -> Result<()> {
        for (i, s) in systems.iter().enumerate() {
            if systems[..i].iter().any(|o| o.label == s.label) {
                return Err(Error::Subsystem(format!("duplicate label `{}`", s.label)));
            }
        }
        Ok(())
    }

    pub fn systems(&self) -> &[Subsystem] {
        &self.systems
    }

    pub fn labels(&self) -> Vec<&str> {
        self.systems.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.repr, Repr::Pure(_))
    }

    pub fn amplitudes(&self) -> Option<&DVector<Complex64>> {
        match &self.repr {
            Repr::Pure(v) => Some(v),
            Repr::Mixed(_) => None,
        }
    }

    pub fn density(&self) -> DMatrix<Complex64> {
        match &self.repr {
            Repr::Pure(v) => v * v.adjoint(),
            Repr::Mixed(m) => m.clone(),
        }
    }

    /// Norm squared for pure states, trace for mixed ones.
    pub fn weight(&self) -> f64 {
        match &self.repr {
            Repr::Pure(v) => v.norm_squared(),
            Repr::Mixed(m) => m.trace().re,
        }
    }

    fn position(&self, label: &str) -> Result<usize> {
        self.systems
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::Subsystem(format!("no subsystem `{label}`")))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.systems[self.position(label)?].dim)
    }

    /// Applies `map` to the listed subsystems (jointly, in the given order)
    /// of a pure state. The targets are replaced by `outputs`, inserted where
    /// the first target was. An empty `outputs` list applies a functional.
    pub fn apply(&self, targets: &[&str], map: &SparseMap, outputs: Vec<Subsystem>) -> Result<Self> {
        let Repr::Pure(amps) = &self.repr else {
            return Err(Error::Subsystem("apply needs a pure state".into()));
        };
        if targets.is_empty() {
            return Err(Error::Subsystem("no target subsystems".into()));
        }
        let pos: Vec<usize> = targets
            .iter()
            .map(|t| self.position(t))
            .collect::<Result<_>>()?;
        let in_dim: usize = pos.iter().map(|&p| self.systems[p].dim).product();
        let out_dim: usize = outputs.iter().map(|s| s.dim).product();
        if map.cols() != in_dim || map.rows() != out_dim {
            return Err(Error::Subsystem(format!(
                "map is {}x{}, targets need {out_dim}x{in_dim}",
                map.rows(),
                map.cols()
            )));
        }

        let first = *pos.iter().min().unwrap();
        let mut new_systems = Vec::new();
        // For each new subsystem: Some(old position) or None for map output k.
        let mut origin = Vec::new();
        for (i, s) in self.systems.iter().enumerate() {
            if i == first {
                for (k, o) in outputs.iter().enumerate() {
                    new_systems.push(o.clone());
                    origin.push(Err(k));
                }
            }
            if !pos.contains(&i) {
                new_systems.push(s.clone());
                origin.push(Ok(i));
            }
        }
        Self::check_labels(&new_systems)?;

        let in_dims: Vec<usize> = self.systems.iter().map(|s| s.dim).collect();
        let out_sub_dims: Vec<usize> = outputs.iter().map(|s| s.dim).collect();
        let new_dims: Vec<usize> = new_systems.iter().map(|s| s.dim).collect();
        let total: usize = new_dims.iter().product();
        let mut out = DVector::zeros(total);
        let mut d_in = vec![0; in_dims.len()];
        let mut d_out = vec![0; out_sub_dims.len()];
        for (idx, &a) in amps.iter().enumerate() {
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            digits(idx, &in_dims, &mut d_in);
            let t_idx = compose(pos.iter().map(|&p| (d_in[p], in_dims[p])));
            for &(o, v) in &map.columns[t_idx] {
                digits(o, &out_sub_dims, &mut d_out);
                let flat = compose(origin.iter().zip(&new_dims).map(|(src, &dim)| match src {
                    Ok(i) => (d_in[*i], dim),
                    Err(k) => (d_out[*k], dim),
                }));
                out[flat] += a * v;
            }
        }
        Ok(Self {
            systems: new_systems,
            repr: Repr::Pure(out),
        })
    }

    /// Reduced density matrix on `keep` (in the given order).
    pub fn partial_trace(&self, keep: &[&str]) -> Result<Self> {
        let keep_pos: Vec<usize> = keep
            .iter()
            .map(|k| self.position(k))
            .collect::<Result<_>>()?;
        let rest: Vec<usize> = (0..self.systems.len())
            .filter(|i| !keep_pos.contains(i))
            .collect();
        let dims: Vec<usize> = self.systems.iter().map(|s| s.dim).collect();
        let dk: usize = keep_pos.iter().map(|&p| dims[p]).product();
        let dr: usize = rest.iter().map(|&p| dims[p]).product();
        let systems: Vec<Subsystem> = keep_pos.iter().map(|&p| self.systems[p].clone()).collect();
        let mut d = vec![0; dims.len()];
        let split = |idx: usize, d: &mut Vec<usize>| {
            digits(idx, &dims, d);
            (
                compose(keep_pos.iter().map(|&p| (d[p], dims[p]))),
                compose(rest.iter().map(|&p| (d[p], dims[p]))),
            )
        };
        let rho = match &self.repr {
            Repr::Pure(v) => {
                let mut m = DMatrix::zeros(dk, dr);
                for (idx, &a) in v.iter().enumerate() {
                    let (k, r) = split(idx, &mut d);
                    m[(k, r)] = a;
                }
                &m * m.adjoint()
            }
            Repr::Mixed(full) => {
                let mut out = DMatrix::zeros(dk, dk);
                let n = full.nrows();
                let mut d2 = vec![0; dims.len()];
                for i in 0..n {
                    let (ki, ri) = split(i, &mut d);
                    for j in 0..n {
                        digits(j, &dims, &mut d2);
                        let rj = compose(rest.iter().map(|&p| (d2[p], dims[p])));
                        if ri == rj {
                            let kj = compose(keep_pos.iter().map(|&p| (d2[p], dims[p])));
                            out[(ki, kj)] += full[(i, j)];
                        }
                    }
                }
                out
            }
        };
        Ok(Self {
            systems,
            repr: Repr::Mixed(rho),
        })
    }

    /// Drops the given subsystems, keeping the rest in order.
    pub fn trace_out(&self, labels: &[&str]) -> Result<Self> {
        for l in labels {
            self.position(l)?;
        }
        let keep: Vec<&str> = self
            .systems
            .iter()
            .map(|s| s.label.as_str())
            .filter(|l| !labels.contains(l))
            .collect();
        self.partial_trace(&keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn bell_like() -> JointState {
        let s = 0.5f64.sqrt();
        JointState::from_parts(
            vec![Subsystem::new("A", 2), Subsystem::new("B", 2)],
            DVector::from_vec(vec![c(s), c(0.0), c(0.0), c(s)]),
        )
        .unwrap()
    }

    #[test]
    fn labels_must_be_unique() {
        let r = JointState::from_parts(
            vec![Subsystem::new("A", 1), Subsystem::new("A", 1)],
            DVector::from_vec(vec![c(1.0)]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn partial_trace_of_bell_is_maximally_mixed() {
        let rho = bell_like().partial_trace(&["A"]).unwrap().density();
        assert!((rho - DMatrix::identity(2, 2) * c(0.5)).camax() < 1e-15);
    }

    #[test]
    fn apply_flip_on_second_qubit() {
        let x = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let out = bell_like()
            .apply(&["B"], &SparseMap::from_dense(&x), vec![Subsystem::new("B", 2)])
            .unwrap();
        let s = 0.5f64.sqrt();
        let expect = DVector::from_vec(vec![c(0.0), c(s), c(s), c(0.0)]);
        assert_eq!(out.amplitudes().unwrap(), &expect);
        assert_eq!(out.labels(), vec!["A", "B"]);
    }

    #[test]
    fn apply_matches_dense_kronecker() {
        let a = DVector::from_vec(vec![c(0.6), Complex64::new(0.0, 0.8)]);
        let m = DVector::from_vec(vec![c(0.1), c(0.2), c(0.3)]);
        let st = JointState::product(vec![
            (Subsystem::new("A", 2), a.clone()),
            (Subsystem::new("m", 3), m.clone()),
        ])
        .unwrap();
        let op = DMatrix::from_fn(4, 3, |i, j| Complex64::new((i + 2 * j) as f64, i as f64 - j as f64));
        let out = st
            .apply(&["m"], &SparseMap::from_dense(&op), vec![Subsystem::new("n", 4)])
            .unwrap();
        let expect = a.kronecker(&(&op * &m));
        assert!((out.amplitudes().unwrap() - expect).camax() < 1e-14);

        // Functional on the middle of three factors removes it.
        let st3 = JointState::product(vec![
            (Subsystem::new("A", 2), a.clone()),
            (Subsystem::new("m", 3), m.clone()),
            (Subsystem::new("B", 2), a.clone()),
        ])
        .unwrap();
        let f = DMatrix::from_row_slice(1, 3, &[c(1.0), c(-1.0), c(2.0)]);
        let out = st3.apply(&["m"], &SparseMap::from_dense(&f), vec![]).unwrap();
        let scalar = (&f * &m)[0];
        let expect = a.kronecker(&a) * scalar;
        assert_eq!(out.labels(), vec!["A", "B"]);
        assert!((out.amplitudes().unwrap() - expect).camax() < 1e-14);
    }

    #[test]
    fn mixed_partial_trace_agrees_with_pure() {
        let a = DVector::from_vec(vec![c(0.6), Complex64::new(0.0, 0.8)]);
        let m = DVector::from_vec(vec![c(0.36), c(0.48), c(0.8)]);
        let st = JointState::product(vec![
            (Subsystem::new("A", 2), a),
            (Subsystem::new("m", 3), m),
        ])
        .unwrap();
        let mixed = st.partial_trace(&["m", "A"]).unwrap();
        let twice = mixed.partial_trace(&["A"]).unwrap().density();
        let direct = st.partial_trace(&["A"]).unwrap().density();
        assert!((twice - direct).camax() < 1e-14);
        assert!(st.trace_out(&["zz"]).is_err());
    }
}
