use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ssgnc::SsgncParams;
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

/// Routing probabilities after the last iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    /// `n×K`, rows sum to 1.
    pub s: Tensor,
    /// End-of-iteration prototypes `C^(T)`.
    pub c_t: Tensor,
}

/// Records dynamic routing of `h` (`n×d`) against constant prototypes
/// `c` (`K×d`). Returns the routing variable and the final prototypes.
pub fn route_on_tape(tape: &mut Tape, h: Var, c: &Tensor, iters: usize, epsilon: f64) -> Result<(Var, Tensor)> {
    if tape.value(h).cols() != c.cols() {
        return Err(Error::shape(
            "dynamic_routing",
            format!("H {:?} vs C {:?}", tape.value(h).shape(), c.shape()),
        ));
    }
    let ct = tape.constant(c.transpose());
    let logits = tape.matmul(h, ct)?;
    let mut s = tape.row_softmax(logits)?;
    let mut c_t = c.clone();
    for _ in 0..iters {
        // c_k = Σ_i s_ik h_i / (Σ_i s_ik + ε)
        let mass = tape.col_sum(s)?;
        let mass = tape.affine(mass, 1.0, epsilon)?;
        let inv = tape.recip(mass)?;
        let inv = tape.transpose(inv)?;
        let st = tape.transpose(s)?;
        let weighted = tape.matmul(st, h)?;
        let c_var = tape.diag_scale(weighted, inv, 0)?;
        c_t = tape.value(c_var).clone();
        let c_var_t = tape.transpose(c_var)?;
        let logits = tape.matmul(h, c_var_t)?;
        s = tape.row_softmax(logits)?;
    }
    Ok((s, c_t))
}

pub fn dynamic_routing(h: &Tensor, c: &Tensor, iters: usize, epsilon: f64) -> Result<RoutingState> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let (s, c_t) = route_on_tape(&mut tape, hv, c, iters, epsilon)?;
    Ok(RoutingState {
        s: tape.value(s).clone(),
        c_t,
    })
}

/// `β·C + (1−β)·C^(T)`.
pub fn update_prototypes(c: &Tensor, c_t: &Tensor, beta: f64) -> Result<Tensor> {
    if c.shape() != c_t.shape() {
        return Err(Error::shape(
            "update_prototypes",
            format!("{:?} vs {:?}", c.shape(), c_t.shape()),
        ));
    }
    Ok(c.zip_map(c_t, |a, b| beta * a + (1.0 - beta) * b))
}

/// `[T_0 X, …, T_M X]` by the three-term recursion on `lap`.
pub fn cheb_basis(lap: &SparseMatrix, x: &Tensor, order: usize) -> Result<Vec<Tensor>> {
    let mut out = vec![x.clone()];
    if order >= 1 {
        out.push(lap.spmm(x)?);
    }
    for m in 2..=order {
        let next = lap.spmm(&out[m - 1])?.zip_map(&out[m - 2], |a, b| 2.0 * a - b);
        out.push(next);
    }
    Ok(out)
}

pub fn cheb_basis_on_tape(tape: &mut Tape, lap: &Arc<SparseMatrix>, x: Var, order: usize) -> Result<Vec<Var>> {
    let mut out = vec![x];
    if order >= 1 {
        out.push(tape.spmm(lap, x)?);
    }
    for m in 2..=order {
        let lx = tape.spmm(lap, out[m - 1])?;
        let two_lx = tape.scale(lx, 2.0)?;
        out.push(tape.sub(two_lx, out[m - 2])?);
    }
    Ok(out)
}

/// Pre-activation of the subgraph convolution:
/// `Σ_k diag(s_{:,k}) Σ_m T_m H θ_{k,m}`. `theta[k][m]` are handles.
pub fn ss_conv_on_tape(tape: &mut Tape, basis: &[Var], theta: &[Vec<Var>], s: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (k, filters) in theta.iter().enumerate() {
        if filters.len() != basis.len() {
            return Err(Error::shape("ss_conv", "filter count differs from basis order"));
        }
        let mut z: Option<Var> = None;
        for (&t_m, &th) in basis.iter().zip(filters) {
            let term = tape.matmul(t_m, th)?;
            z = Some(match z {
                Some(prev) => tape.add(prev, term)?,
                None => term,
            });
        }
        let weighted = tape.diag_scale(z.expect("order >= 0"), s, k)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, weighted)?,
            None => weighted,
        });
    }
    acc.ok_or_else(|| Error::shape("ss_conv", "no prototypes"))
}

/// Value-level subgraph convolution with activation `act`.
pub fn ss_conv(
    lap: &SparseMatrix,
    h: &Tensor,
    theta: &[Vec<Tensor>],
    s: &Tensor,
    act: impl Fn(f64) -> f64,
) -> Result<Tensor> {
    let order = theta.first().map_or(0, |f| f.len().saturating_sub(1));
    let lap = Arc::new(lap.clone());
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let sv = tape.constant(s.clone());
    let basis = cheb_basis_on_tape(&mut tape, &lap, hv, order)?;
    let th: Vec<Vec<Var>> = theta
        .iter()
        .map(|f| f.iter().map(|t| tape.constant(t.clone())).collect())
        .collect();
    let pre = ss_conv_on_tape(&mut tape, &basis, &th, sv)?;
    Ok(tape.value(pre).map(act))
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub probs: Var,
    /// Final routing variable per layer.
    pub routing: Vec<Var>,
    /// End-of-iteration prototypes per layer.
    pub c_t: Vec<Tensor>,
}

fn mlp(tape: &mut Tape, x: Var, vars: &[Var], idx: [usize; 4]) -> Result<Var> {
    let h = tape.matmul(x, vars[idx[0]])?;
    let h = tape.add_bias(h, vars[idx[1]])?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, vars[idx[2]])?;
    tape.add_bias(h, vars[idx[3]])
}

/// Records the full calibrator on `tape`. `vars` are the store's tensors
/// attached in order. `masks` holds one dropout mask per layer in train
/// mode.
pub fn ssgnc_forward(
    tape: &mut Tape,
    lap: &Arc<SparseMatrix>,
    x: Var,
    params: &SsgncParams,
    vars: &[Var],
    masks: Option<&[Tensor]>,
) -> Result<ForwardPass> {
    let c = &params.config;
    if vars.len() != params.store.len() {
        return Err(Error::shape(
            "ssgnc_forward",
            "parameter handle count differs from store",
        ));
    }
    let mut h = mlp(tape, x, vars, params.mlp_in())?;
    let mut outputs = Vec::with_capacity(c.layers);
    let mut routing = Vec::with_capacity(c.layers);
    let mut c_t = Vec::with_capacity(c.layers);
    for l in 0..c.layers {
        let (s, proto) = route_on_tape(tape, h, &params.prototypes[l], c.route_iters, c.epsilon)?;
        let basis = cheb_basis_on_tape(tape, lap, h, c.cheb_order)?;
        let theta: Vec<Vec<Var>> = (0..c.prototypes)
            .map(|k| (0..=c.cheb_order).map(|m| vars[params.theta(l, k, m)]).collect())
            .collect();
        let pre = ss_conv_on_tape(tape, &basis, &theta, s)?;
        let mut next = tape.tanh(pre)?;
        if let Some(m) = masks {
            next = tape.dropout(next, m[l].clone())?;
        }
        outputs.push(next);
        routing.push(s);
        c_t.push(proto);
        h = next;
    }
    let cat = tape.concat_cols(&outputs)?;
    let logits = mlp(tape, cat, vars, params.mlp_out())?;
    let probs = tape.row_softmax(logits)?;
    Ok(ForwardPass { probs, routing, c_t })
}

/// The Laplacian the filters act on.
pub fn filter_operator(lap: SparseMatrix, rescale_spectrum: bool) -> SparseMatrix {
    if rescale_spectrum {
        lap.shifted(-1.0)
    } else {
        lap
    }
}
