use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::adamw::{adamw_update, AdamWConfig, AdamWState};
use super::muon::{muon_update, MatrixRule, MuonConfig, MuonState};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::param::ParamBlock;

/// Which parameter blocks go to the matrix optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DispatchPolicy {
    /// Backbone projections (QKV, out-proj, MLP up/down) to the matrix rule;
    /// vectors, embeddings and the classifier head to AdamW.
    MatrixToMuon,
    AllAdamW,
    /// Every 2-D tensor to the matrix rule.
    AllMuonMatrices,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Route {
    Muon,
    AdamW,
}

impl DispatchPolicy {
    pub fn route(self, block: &ParamBlock) -> Route {
        match self {
            DispatchPolicy::AllAdamW => Route::AdamW,
            DispatchPolicy::MatrixToMuon if !block.is_vector && block.family.is_backbone_matrix() => {
                Route::Muon
            }
            DispatchPolicy::MatrixToMuon => Route::AdamW,
            DispatchPolicy::AllMuonMatrices if !block.is_vector => Route::Muon,
            DispatchPolicy::AllMuonMatrices => Route::AdamW,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockState {
    Muon(MuonState),
    AdamW(AdamWState),
}

impl BlockState {
    pub fn step(&self) -> u64 {
        match self {
            BlockState::Muon(s) => s.step,
            BlockState::AdamW(s) => s.step,
        }
    }

    pub fn route(&self) -> Route {
        match self {
            BlockState::Muon(_) => Route::Muon,
            BlockState::AdamW(_) => Route::AdamW,
        }
    }
}

/// What the observer of [`HybridOptimizer::step_observed`] is shown for
/// each block after momentum accumulation.
pub struct MomentumView<'a> {
    pub block: &'a ParamBlock,
    pub route: Route,
    /// `M_t` for matrix-rule blocks; the first moment for AdamW blocks.
    pub momentum: &'a Matrix,
}

/// Per-block optimizer states keyed by block name, routing each block to the
/// matrix rule or AdamW.
///
/// The set of block names is fixed by the first call to [`step`](Self::step);
/// unknown names afterwards are rejected.
#[derive(Clone, Debug)]
pub struct HybridOptimizer {
    policy: DispatchPolicy,
    rule: MatrixRule,
    muon: MuonConfig,
    adamw: AdamWConfig,
    overrides: BTreeMap<String, Route>,
    states: BTreeMap<String, BlockState>,
    sealed: bool,
}

impl HybridOptimizer {
    pub fn new(
        policy: DispatchPolicy,
        rule: MatrixRule,
        muon: MuonConfig,
        adamw: AdamWConfig,
    ) -> Result<Self> {
        muon.validate()?;
        adamw.validate()?;
        Ok(Self {
            policy,
            rule,
            muon,
            adamw,
            overrides: BTreeMap::new(),
            states: BTreeMap::new(),
            sealed: false,
        })
    }

    /// Force a block to a route regardless of policy. Only allowed before the
    /// first step; vector blocks cannot be sent to the matrix rule.
    pub fn with_override(mut self, name: impl Into<String>, route: Route) -> Result<Self> {
        if self.sealed {
            return Err(Error::Config("overrides must be set before the first step".into()));
        }
        self.overrides.insert(name.into(), route);
        Ok(self)
    }

    pub fn policy(&self) -> DispatchPolicy {
        self.policy
    }

    pub fn rule(&self) -> MatrixRule {
        self.rule
    }

    pub fn muon_config(&self) -> &MuonConfig {
        &self.muon
    }

    pub fn adamw_config(&self) -> &AdamWConfig {
        &self.adamw
    }

    pub fn route(&self, block: &ParamBlock) -> Route {
        let r = self
            .overrides
            .get(&block.name)
            .copied()
            .unwrap_or_else(|| self.policy.route(block));
        if block.is_vector {
            Route::AdamW
        } else {
            r
        }
    }

    pub fn state(&self, name: &str) -> Option<&BlockState> {
        self.states.get(name)
    }

    pub fn states(&self) -> impl Iterator<Item = (&str, &BlockState)> {
        self.states.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn register(&mut self, blocks: &[ParamBlock]) -> Result<()> {
        if self.sealed {
            for b in blocks {
                match self.states.get(&b.name) {
                    None => return Err(Error::Registry(b.name.clone())),
                    Some(s) => {
                        let shape = match s {
                            BlockState::Muon(m) => m.v.shape(),
                            BlockState::AdamW(a) => a.m1.shape(),
                        };
                        if shape != b.shape() {
                            return Err(Error::Dimension {
                                op: "optimizer state",
                                lhs: shape,
                                rhs: b.shape(),
                            });
                        }
                    }
                }
            }
            return Ok(());
        }
        let mut states = BTreeMap::new();
        for b in blocks {
            let (r, c) = b.shape();
            let state = match self.route(b) {
                Route::Muon => BlockState::Muon(MuonState::new(r, c)),
                Route::AdamW => BlockState::AdamW(AdamWState::new(r, c)),
            };
            if states.insert(b.name.clone(), state).is_some() {
                return Err(Error::Config(alloc::format!("duplicate block name `{}`", b.name)));
            }
        }
        self.states = states;
        self.sealed = true;
        Ok(())
    }

    /// Update every block from its `grad`, scaling both base learning rates by
    /// `lr_factor`.
    pub fn step(&mut self, blocks: &mut [ParamBlock], lr_factor: f64) -> Result<()> {
        self.step_observed(blocks, lr_factor, |_| {})
    }

    /// [`step`](Self::step), showing each block's accumulated momentum to
    /// `observe` before moving on to the next block.
    pub fn step_observed(
        &mut self,
        blocks: &mut [ParamBlock],
        lr_factor: f64,
        mut observe: impl FnMut(MomentumView<'_>),
    ) -> Result<()> {
        self.register(blocks)?;
        let muon_lr = self.muon.lr * lr_factor;
        let adamw_lr = self.adamw.lr * lr_factor;
        for b in blocks.iter_mut() {
            let state = self.states.get_mut(&b.name).expect("registered");
            match state {
                BlockState::Muon(s) => {
                    let m = muon_update(&mut b.value, &b.grad, s, &self.muon, muon_lr, self.rule)?;
                    observe(MomentumView {
                        block: b,
                        route: Route::Muon,
                        momentum: &m,
                    });
                }
                BlockState::AdamW(s) => {
                    adamw_update(&mut b.value, &b.grad, s, &self.adamw, adamw_lr)?;
                    observe(MomentumView {
                        block: b,
                        route: Route::AdamW,
                        momentum: &s.m1,
                    });
                }
            }
        }
        Ok(())
    }

    /// Names of blocks per route, in name order.
    pub fn routing_table(&self) -> Vec<(String, Route)> {
        self.states
            .iter()
            .map(|(k, v)| (k.clone(), v.route()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::adamw::adamw_step;
    use crate::param::ParamFamily;
    use crate::testutil::gaussian;
    use alloc::vec;

    fn blocks() -> Vec<ParamBlock> {
        let mut qkv = ParamBlock::matrix("blocks.0.attn.qkv.weight", ParamFamily::Qkv, 0, gaussian(6, 2, 1));
        qkv.grad = gaussian(6, 2, 2);
        let mut bias = ParamBlock::vector("blocks.0.attn.qkv.bias", ParamFamily::Bias, 0, &[0.1; 6]);
        bias.grad = gaussian(1, 6, 3);
        let mut head = ParamBlock::matrix("head.weight", ParamFamily::Head, 0, gaussian(3, 2, 4));
        head.grad = gaussian(3, 2, 5);
        vec![qkv, bias, head]
    }

    fn opt(policy: DispatchPolicy) -> HybridOptimizer {
        HybridOptimizer::new(
            policy,
            MatrixRule::NewtonSchulz,
            MuonConfig::default(),
            AdamWConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn matrix_to_muon_routing() {
        let mut o = opt(DispatchPolicy::MatrixToMuon);
        let mut b = blocks();
        o.step(&mut b, 1.0).unwrap();
        assert!(matches!(o.state("blocks.0.attn.qkv.weight"), Some(BlockState::Muon(_))));
        assert!(matches!(o.state("blocks.0.attn.qkv.bias"), Some(BlockState::AdamW(_))));
        assert!(matches!(o.state("head.weight"), Some(BlockState::AdamW(_))));
    }

    #[test]
    fn all_muon_matrices_and_override() {
        let mut o = opt(DispatchPolicy::AllMuonMatrices)
            .with_override("blocks.0.attn.qkv.weight", Route::AdamW)
            .unwrap()
            .with_override("blocks.0.attn.qkv.bias", Route::Muon)
            .unwrap();
        let mut b = blocks();
        o.step(&mut b, 1.0).unwrap();
        assert!(matches!(o.state("head.weight"), Some(BlockState::Muon(_))));
        assert!(matches!(o.state("blocks.0.attn.qkv.weight"), Some(BlockState::AdamW(_))));
        assert!(matches!(o.state("blocks.0.attn.qkv.bias"), Some(BlockState::AdamW(_))));
    }

    #[test]
    fn all_adamw_allocates_no_muon_state() {
        let mut o = opt(DispatchPolicy::AllAdamW);
        o.step(&mut blocks(), 1.0).unwrap();
        assert!(o.states().all(|(_, s)| matches!(s, BlockState::AdamW(_))));
    }

    #[test]
    fn step_counters_advance_together() {
        let mut o = opt(DispatchPolicy::MatrixToMuon);
        let mut b = blocks();
        o.step(&mut b, 1.0).unwrap();
        o.step(&mut b, 0.5).unwrap();
        assert!(o.states().all(|(_, s)| s.step() == 2));
    }

    #[test]
    fn sealed_registry_rejects_new_names() {
        let mut o = opt(DispatchPolicy::MatrixToMuon);
        let mut b = blocks();
        o.step(&mut b, 1.0).unwrap();
        b[1].name = "renamed".into();
        assert_eq!(o.step(&mut b, 1.0).unwrap_err(), Error::Registry("renamed".into()));
        assert!(o.with_override("x", Route::Muon).is_err());
    }

    #[test]
    fn all_adamw_is_bit_exact_with_direct_loop() {
        let cfg = AdamWConfig::default();
        let mut o = opt(DispatchPolicy::AllAdamW);
        let mut b = blocks();
        let mut direct: Vec<(Matrix, AdamWState)> = b
            .iter()
            .map(|x| (x.value.clone(), AdamWState::new(x.shape().0, x.shape().1)))
            .collect();
        for t in 0..5 {
            for (i, blk) in b.iter_mut().enumerate() {
                blk.grad = gaussian(blk.shape().0, blk.shape().1, 50 + t * 7 + i as u64);
                let (w, s) = adamw_step(&direct[i].0, &blk.grad, &direct[i].1, &cfg).unwrap();
                direct[i] = (w, s);
            }
            o.step(&mut b, 1.0).unwrap();
        }
        for (blk, (w, _)) in b.iter().zip(&direct) {
            assert_eq!(&blk.value, w);
        }
    }

    #[test]
    fn observer_sees_every_block_once() {
        let mut o = opt(DispatchPolicy::MatrixToMuon);
        let mut b = blocks();
        let mut seen = Vec::new();
        o.step_observed(&mut b, 1.0, |v| seen.push((v.block.name.clone(), v.route)))
            .unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[0], ("blocks.0.attn.qkv.weight".into(), Route::Muon));
    }
}
