use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{PifmError, Result};
use crate::linalg::Matrix;
use crate::nn::{time_embedding, Checkpoint, ParameterSet, Tape, Var};

const RMS_EPS: f64 = 1e-6;

/// Architecture of the velocity network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Input edge channels: `A` and `A·A / n`. Fixed at 2.
    pub c_init: usize,
    pub c_hid: usize,
    pub c_final: usize,
    /// Width of each attention head that produces one edge channel.
    pub head_dim: usize,
    pub time_dim: usize,
    /// Width and depth (number of linear maps) of the per-pair output MLP.
    pub final_hidden: usize,
    pub final_linears: usize,
    pub dropout: f64,
    pub max_nodes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_dim: 32,
            num_layers: 5,
            c_init: 2,
            c_hid: 8,
            c_final: 4,
            head_dim: 8,
            time_dim: 32,
            final_hidden: 76,
            final_linears: 3,
            dropout: 0.2,
            max_nodes: 125,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_init != 2 {
            return Err(PifmError::Config(format!("c_init must be 2 (A and A²/n), got {}", self.c_init)));
        }
        if self.num_layers == 0
            || self.hidden_dim == 0
            || self.c_hid == 0
            || self.c_final == 0
            || self.head_dim == 0
            || self.final_hidden == 0
            || self.final_linears == 0
        {
            return Err(PifmError::Config("network widths and depth must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(PifmError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        time_embedding(0.0, self.time_dim).map(|_| ())
    }

    fn channels_out(&self, layer: usize) -> usize {
        if layer + 1 == self.num_layers {
            self.c_final
        } else {
            self.c_hid
        }
    }

    /// Edge channels seen by the final per-pair MLP.
    pub fn total_channels(&self) -> usize {
        self.c_init + (0..self.num_layers).map(|l| self.channels_out(l)).sum::<usize>()
    }
}

/// Permutation-equivariant, time-conditioned velocity field on adjacency
/// matrices.
///
/// Each layer updates node states by aggregating over every current edge
/// channel (`Σ_c E_c H W_c + H W_self + b`), applies SiLU, dropout and an RMS
/// norm whose output is scaled by `1 + MLP(time embedding)`, adds a residual,
/// then emits new symmetric edge channels `tanh((Q Kᵀ + K Qᵀ) / 2√d)`. All
/// channels are stacked per node pair and mapped to one velocity by an MLP
/// whose hidden layers are also time-modulated and whose last layer starts at
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityNet {
    pub config: NetConfig,
    pub params: ParameterSet,
}

impl VelocityNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        let h = config.hidden_dim;
        let mut c_in = config.c_init;
        let mut d_in = config.c_init;
        for l in 0..config.num_layers {
            p.init_glorot(&format!("l{l}/w_msg"), c_in * d_in, h, &mut rng)?;
            p.init_glorot(&format!("l{l}/w_self"), d_in, h, &mut rng)?;
            p.init_const(&format!("l{l}/b"), 1, h, 0.0)?;
            p.init_const(&format!("l{l}/norm"), 1, h, 1.0)?;
            p.init_glorot(&format!("l{l}/t_w1"), config.time_dim, h, &mut rng)?;
            p.init_const(&format!("l{l}/t_b1"), 1, h, 0.0)?;
            p.init_glorot(&format!("l{l}/t_w2"), h, h, &mut rng)?;
            p.init_const(&format!("l{l}/t_b2"), 1, h, 0.0)?;
            let c_out = config.channels_out(l);
            for c in 0..c_out {
                p.init_glorot(&format!("l{l}/q{c}"), h, config.head_dim, &mut rng)?;
                p.init_glorot(&format!("l{l}/k{c}"), h, config.head_dim, &mut rng)?;
            }
            c_in = c_out;
            d_in = h;
        }
        let last = config.final_linears - 1;
        for k in 0..config.final_linears {
            let fan_in = if k == 0 { config.total_channels() } else { config.final_hidden };
            if k == last {
                p.init_const(&format!("out/w{k}"), fan_in, 1, 0.0)?;
                p.init_const(&format!("out/b{k}"), 1, 1, 0.0)?;
            } else {
                p.init_glorot(&format!("out/w{k}"), fan_in, config.final_hidden, &mut rng)?;
                p.init_const(&format!("out/b{k}"), 1, config.final_hidden, 0.0)?;
                p.init_glorot(&format!("out/tg{k}"), config.time_dim, config.final_hidden, &mut rng)?;
                p.init_const(&format!("out/tgb{k}"), 1, config.final_hidden, 0.0)?;
                p.init_glorot(&format!("out/tb{k}"), config.time_dim, config.final_hidden, &mut rng)?;
                p.init_const(&format!("out/tbb{k}"), 1, config.final_hidden, 0.0)?;
            }
        }
        Ok(VelocityNet { config, params: p })
    }

    /// Builds `v(A_t, t)` on `tape`, returning the symmetric zero-diagonal
    /// `n x n` output. Passing `rng` switches dropout on.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        a_t: &Matrix,
        t: f64,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let n = a_t.rows();
        if !a_t.is_square() {
            return Err(PifmError::dim("velocity_forward", format!("input {:?}", a_t.shape())));
        }
        if n > cfg.max_nodes {
            return Err(PifmError::Capacity(format!(
                "graph of {n} nodes exceeds the configured maximum {}",
                cfg.max_nodes
            )));
        }
        if n == 0 {
            return Ok(tape.constant(Matrix::zeros(0, 0)));
        }
        let p = &self.params;
        let inv_n = 1.0 / n as f64;
        let a = tape.constant(a_t.clone());
        let a2 = tape.matmul(a, a)?;
        let a2 = tape.scale(a2, inv_n);
        let mut edges = vec![a, a2];
        let mut all_edges = edges.clone();
        let r0 = tape.row_sum(a);
        let r0 = tape.scale(r0, inv_n);
        let r1 = tape.row_sum(a2);
        let r1 = tape.scale(r1, inv_n);
        let mut h = tape.concat_cols(&[r0, r1])?;
        let temb = tape.constant(Matrix::from_vec(1, cfg.time_dim, time_embedding(t, cfg.time_dim)?)?);
        let attn_scale = 0.5 / (cfg.head_dim as f64).sqrt();

        for l in 0..cfg.num_layers {
            let param = |tape: &mut Tape, name: &str| tape.param(p, &format!("l{l}/{name}"));
            let msgs: Vec<Var> = edges
                .iter()
                .map(|&e| tape.matmul(e, h))
                .collect::<Result<_>>()?;
            let msgs = tape.concat_cols(&msgs)?;
            let w_msg = param(tape, "w_msg")?;
            let m = tape.matmul(msgs, w_msg)?;
            let w_self = param(tape, "w_self")?;
            let b = param(tape, "b")?;
            let own = tape.linear(h, w_self, b)?;
            let pre = tape.add(m, own)?;
            let act = tape.silu(pre);
            let act = tape.dropout(act, cfg.dropout, rng.as_deref_mut())?;
            let norm = param(tape, "norm")?;
            let normed = tape.rms_norm(act, norm, RMS_EPS)?;

            let (tw1, tb1, tw2, tb2) = (param(tape, "t_w1")?, param(tape, "t_b1")?, param(tape, "t_w2")?, param(tape, "t_b2")?);
            let film = tape.linear(temb, tw1, tb1)?;
            let film = tape.silu(film);
            let film = tape.linear(film, tw2, tb2)?;
            let film = tape.add_scalar(film, 1.0);
            let mut next = tape.mul_row(normed, film)?;
            if l > 0 {
                next = tape.add(next, h)?;
            }
            h = next;

            edges = (0..cfg.channels_out(l))
                .map(|c| -> Result<Var> {
                    let wq = param(tape, &format!("q{c}"))?;
                    let wk = param(tape, &format!("k{c}"))?;
                    let q = tape.matmul(h, wq)?;
                    let k = tape.matmul(h, wk)?;
                    let qk = tape.matmul_nt(q, k)?;
                    let kq = tape.matmul_nt(k, q)?;
                    let s = tape.add(qk, kq)?;
                    let s = tape.scale(s, attn_scale);
                    Ok(tape.tanh(s))
                })
                .collect::<Result<_>>()?;
            all_edges.extend(edges.iter().copied());
        }

        let mut z = tape.stack_flat(&all_edges)?;
        for k in 0..cfg.final_linears {
            let w = tape.param(p, &format!("out/w{k}"))?;
            let b = tape.param(p, &format!("out/b{k}"))?;
            z = tape.linear(z, w, b)?;
            if k + 1 < cfg.final_linears {
                // Time-dependent scale and shift of every pair's pre-activation.
                let (gw, gb) = (tape.param(p, &format!("out/tg{k}"))?, tape.param(p, &format!("out/tgb{k}"))?);
                let (bw, bb) = (tape.param(p, &format!("out/tb{k}"))?, tape.param(p, &format!("out/tbb{k}"))?);
                let gamma = tape.linear(temb, gw, gb)?;
                let gamma = tape.add_scalar(gamma, 1.0);
                let beta = tape.linear(temb, bw, bb)?;
                z = tape.mul_row(z, gamma)?;
                z = tape.add_row(z, beta)?;
                z = tape.silu(z);
            }
        }
        let v = tape.reshape(z, n, n)?;
        tape.symmetrize(v)
    }

    /// Evaluation-mode velocity: deterministic, no dropout.
    pub fn velocity(&self, a_t: &Matrix, t: f64) -> Result<Matrix> {
        let mut tape = Tape::new();
        let v = self.forward_on_tape::<ChaCha8Rng>(&mut tape, a_t, t, None)?;
        Ok(tape.value(v).clone())
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new("velocity_net", json!({ "net": self.config, "run": metadata }));
        ck.push_params("", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "velocity_net" {
            return Err(PifmError::State(format!("`{}` is not a velocity network checkpoint", ck.kind)));
        }
        let config: NetConfig = serde_json::from_value(
            ck.metadata
                .get("net")
                .cloned()
                .ok_or_else(|| PifmError::State("checkpoint lacks the network config".into()))?,
        )?;
        config.validate()?;
        let params = ck.params("")?;
        let expected = VelocityNet::new(config.clone(), 0)?;
        for (name, t) in expected.params.iter() {
            let got = params.get(name)?;
            if got.shape != t.shape {
                return Err(PifmError::State(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape, t.shape
                )));
            }
        }
        Ok(VelocityNet { config, params })
    }
}

/// `v(A_t, t)` with dropout active when `train_mode` and an rng are given.
pub fn velocity_forward<R: Rng + ?Sized>(
    net: &VelocityNet,
    a_t: &Matrix,
    t: f64,
    train_mode: bool,
    rng: Option<&mut R>,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = net.forward_on_tape(&mut tape, a_t, t, if train_mode { rng } else { None })?;
    Ok(tape.value(v).clone())
}
