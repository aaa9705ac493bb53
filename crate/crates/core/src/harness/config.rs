//! Experiment configuration: a TOML file plus dotted `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{ShiftDirection, ZPolicy};
use crate::error::{Error, Result};
use crate::fedsim::{LoraScaling, LoraSpec};
use crate::graphcraft::SelectionPolicy;
use crate::gst::RowPolicy;
use crate::manipulator::{
    AugmpConfig, DistanceTarget, InnerConfig, PenaltyForm, SimilarityAggregate,
};
use crate::sentinel::ScorePolicy;
use crate::vgae::{DecodeFrom, NodeFeatures, VgaeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    Augmp,
    Alie,
    Rmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    #[default]
    None,
    Distance,
    Similarity,
    Both,
}

impl DefenseKind {
    pub fn uses_distance(self) -> bool {
        matches!(self, DefenseKind::Distance | DefenseKind::Both)
    }

    pub fn uses_similarity(self) -> bool {
        matches!(self, DefenseKind::Similarity | DefenseKind::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub dim: usize,
    /// Training pool size per class, shared out among all agents.
    pub per_class: usize,
    /// Global test set size per class.
    pub test_per_class: usize,
    pub separation: f64,
    /// Share of each agent's data kept aside for local testing (benign) or
    /// as the attacker's surrogate evaluation set (adversarial).
    pub holdout_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 20,
            per_class: 250,
            test_per_class: 250,
            separation: 4.0,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths between input and output; empty means one adapted layer.
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub scaling: LoraScaling,
    /// `None` draws `A` from `N(0, 1/k)`.
    pub a_init_std: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            rank: 2,
            alpha: 4.0,
            dropout: 0.1,
            scaling: LoraScaling::AlphaOverR,
            a_init_std: None,
        }
    }
}

impl ModelConfig {
    pub fn lora(&self) -> LoraSpec {
        LoraSpec {
            rank: self.rank,
            alpha: self.alpha,
            dropout: self.dropout,
            scaling: self.scaling,
            a_init_std: self.a_init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VgaeSection {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    pub features: NodeFeatures,
    pub decode_from: DecodeFrom,
    pub deterministic: bool,
}

impl Default for VgaeSection {
    fn default() -> Self {
        let v = VgaeConfig::default();
        Self {
            hidden: v.hidden,
            latent: v.latent,
            epochs: v.epochs,
            lr: v.lr,
            features: v.features,
            decode_from: v.decode_from,
            deterministic: v.deterministic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmpSection {
    pub visibility: f64,
    pub nodes: usize,
    pub selection: SelectionPolicy,
    pub row_policy: RowPolicy,
    pub steps: usize,
    pub step_size: f64,
    pub clip: f64,
    pub rho_lambda: f64,
    pub rho_theta: f64,
    /// Dual step `ε`.
    pub dual_step: f64,
    pub penalty: PenaltyForm,
    pub similarity: SimilarityKind,
    pub temperature: f64,
    pub distance_target: DistanceTarget,
    /// Optional multiplicative `ρ` growth; 1 disables it.
    pub rho_growth: f64,
    pub rho_max: f64,
    pub al_penalty_off: bool,
    pub grl_off: bool,
    /// Bound the attacker's targets by the current observed benign statistics.
    pub tighten_to_observed: bool,
    /// Stealth margin the attacker keeps below both thresholds.
    pub margin: f64,
}

impl Default for AugmpSection {
    fn default() -> Self {
        let inner = InnerConfig::default();
        Self {
            visibility: 1.0,
            nodes: 128,
            selection: SelectionPolicy::VarianceTop,
            row_policy: RowPolicy::Random,
            steps: inner.steps,
            step_size: inner.step_size,
            clip: inner.clip,
            rho_lambda: 10.0,
            rho_theta: 10.0,
            dual_step: 0.05,
            penalty: PenaltyForm::Squared,
            similarity: SimilarityKind::Max,
            temperature: 50.0,
            distance_target: DistanceTarget::PreviousGlobal,
            rho_growth: 1.0,
            rho_max: 1e3,
            al_penalty_off: false,
            grl_off: false,
            tighten_to_observed: true,
            margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    /// `κ` in `d_T = (1+κ)·max distance`.
    pub kappa: f64,
    /// Percentile of benign pairwise similarities used for `δ_T`.
    pub percentile: f64,
    pub score_policy: ScorePolicy,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            percentile: 95.0,
            score_policy: ScorePolicy::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlieSection {
    pub z_policy: ZPolicy,
    pub direction: ShiftDirection,
}

impl Default for AlieSection {
    fn default() -> Self {
        Self {
            z_policy: ZPolicy::Fixed { z: 1.0 },
            direction: ShiftDirection::AgainstMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmpSection {
    pub scale: f64,
}

impl Default for RmpSection {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

/// Inert values from the LLM-scale setting, echoed for provenance only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub llm_learning_rate: f64,
    pub batch_size: usize,
    pub max_sequence_length: usize,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            llm_learning_rate: 5e-5,
            batch_size: 8,
            max_sequence_length: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Benign agents `I`.
    pub agents: usize,
    /// Adversarial agents `J`, in addition to the benign ones.
    pub adversaries: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub local_lr: f64,
    pub server_lr: f64,
    pub dirichlet_beta: f64,
    pub attack: AttackKind,
    pub defense: DefenseKind,
    /// Write per-round debug JSON next to the metrics.
    pub debug: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub vgae: VgaeSection,
    pub augmp: AugmpSection,
    pub thresholds: ThresholdSection,
    pub alie: AlieSection,
    pub rmp: RmpSection,
    pub reference: ReferenceSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            agents: 5,
            adversaries: 2,
            rounds: 50,
            local_epochs: 5,
            local_lr: 0.2,
            server_lr: 1.0,
            dirichlet_beta: 0.3,
            attack: AttackKind::None,
            defense: DefenseKind::None,
            debug: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            vgae: VgaeSection::default(),
            augmp: AugmpSection::default(),
            thresholds: ThresholdSection::default(),
            alie: AlieSection::default(),
            rmp: RmpSection::default(),
            reference: ReferenceSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Loads `path` (or the defaults) and applies `key=value` overrides in order.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let mut table: toml::Table =
            toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        apply_override(&mut table, assignment)?;
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.agents < 2 {
            return bad(format!(
                "agents = {} (at least two benign agents are required)",
                self.agents
            ));
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if !(self.local_lr >= 0.0 && self.local_lr.is_finite()) {
            return bad(format!(
                "local_lr = {} must be finite and nonnegative",
                self.local_lr
            ));
        }
        if !(self.server_lr >= 0.0 && self.server_lr.is_finite()) {
            return bad(format!(
                "server_lr = {} must be finite and nonnegative",
                self.server_lr
            ));
        }
        if !(self.dirichlet_beta > 0.0 && self.dirichlet_beta.is_finite()) {
            return bad(format!(
                "dirichlet_beta = {} must be positive",
                self.dirichlet_beta
            ));
        }
        if self.attack != AttackKind::None && self.adversaries == 0 {
            return bad(format!("attack = {:?} needs adversaries >= 1", self.attack));
        }
        let d = &self.data;
        if d.classes < 2 || d.per_class == 0 || d.test_per_class == 0 {
            return bad("data needs at least two classes and nonempty pools".into());
        }
        if !(d.separation > 0.0 && d.separation.is_finite()) {
            return bad(format!(
                "data.separation = {} must be positive",
                d.separation
            ));
        }
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return bad(format!(
                "data.holdout_fraction = {} outside (0, 1)",
                d.holdout_fraction
            ));
        }
        if d.per_class * d.classes < 2 * (self.agents + self.adversaries) {
            return bad("training pool too small for the number of agents".into());
        }
        let a = &self.augmp;
        if !(a.visibility > 0.0 && a.visibility <= 1.0) {
            return bad(format!(
                "augmp.visibility = {} outside (0, 1]",
                a.visibility
            ));
        }
        if a.nodes < 2 {
            return bad("augmp.nodes must be at least 2".into());
        }
        if a.steps == 0 || !(a.step_size >= 0.0) || !(a.clip > 0.0) {
            return bad("augmp inner loop needs steps >= 1, step_size >= 0, clip > 0".into());
        }
        if !(a.rho_lambda >= 0.0 && a.rho_theta >= 0.0 && a.dual_step > 0.0 && a.temperature > 0.0)
        {
            return bad(
                "augmp penalty weights must be nonnegative and dual_step, temperature positive"
                    .into(),
            );
        }
        if !(0.0..1.0).contains(&a.margin) {
            return bad(format!("augmp.margin = {} outside [0, 1)", a.margin));
        }
        if !(a.rho_growth >= 1.0) {
            return bad("augmp.rho_growth must be at least 1".into());
        }
        let t = &self.thresholds;
        if !(t.kappa >= 0.0 && t.kappa.is_finite())
            || !(t.percentile > 0.0 && t.percentile <= 100.0)
        {
            return bad("thresholds need kappa >= 0 and percentile in (0, 100]".into());
        }
        if !(self.rmp.scale > 0.0) {
            return bad("rmp.scale must be positive".into());
        }
        if self.vgae.hidden == 0 || self.vgae.latent == 0 || !(self.vgae.lr >= 0.0) {
            return bad("vgae widths must be positive and lr nonnegative".into());
        }
        Ok(())
    }

    pub fn model_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.data.dim];
        dims.extend(&self.model.hidden);
        dims.push(self.data.classes);
        dims
    }

    pub fn vgae_config(&self) -> VgaeConfig {
        let v = &self.vgae;
        VgaeConfig {
            hidden: v.hidden,
            latent: v.latent,
            epochs: v.epochs,
            lr: v.lr,
            features: v.features,
            decode_from: v.decode_from,
            deterministic: v.deterministic,
        }
    }

    pub fn augmp_config(&self) -> AugmpConfig {
        let a = &self.augmp;
        AugmpConfig {
            visibility: a.visibility,
            nodes: a.nodes,
            selection: a.selection,
            vgae: self.vgae_config(),
            row_policy: a.row_policy,
            inner: InnerConfig {
                steps: a.steps,
                step_size: a.step_size,
                clip: a.clip,
            },
            penalty: a.penalty,
            similarity: match a.similarity {
                SimilarityKind::Max => SimilarityAggregate::Max {
                    temperature: a.temperature,
                },
                SimilarityKind::Mean => SimilarityAggregate::Mean,
            },
            distance_target: a.distance_target,
            grl_off: a.grl_off,
            tighten_to_observed: a.tighten_to_observed,
            margin: a.margin,
        }
    }
}

/// Parses `a.b.c=value` into the table. The value is read as a TOML literal
/// when possible (numbers, booleans, arrays, inline tables) and as a bare
/// string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!(
            "override `{assignment}` has an empty key"
        )));
    }
    let value = parse_literal(raw);
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override key `{key}`: `{p}` is not a section"))
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn defaults_follow_the_reference_table() {
        let c = ExperimentConfig::default();
        assert_eq!(
            (c.agents, c.adversaries, c.rounds, c.local_epochs),
            (5, 2, 50, 5)
        );
        assert_eq!(c.server_lr, 1.0);
        assert_eq!(c.dirichlet_beta, 0.3);
        assert_eq!(
            (c.vgae.hidden, c.vgae.latent, c.vgae.epochs, c.vgae.lr),
            (64, 32, 30, 0.01)
        );
        assert_eq!(c.model.dropout, 0.1);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = ExperimentConfig::load_with_overrides(
            None,
            &[
                "attack=augmp".into(),
                "augmp.visibility=0.6".into(),
                "model.rank=1".into(),
                "model.rank=2".into(),
                "alie.z_policy = { kind = \"quantile\" }".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.attack, AttackKind::Augmp);
        assert_eq!(cfg.augmp.visibility, 0.6);
        assert_eq!(cfg.model.rank, 2);
        assert_eq!(cfg.alie.z_policy, ZPolicy::Quantile);
    }

    #[test]
    fn typed_errors() {
        assert!(ExperimentConfig::from_toml_str("agents = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("nonsense = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("attack = \"sideways\"").is_err());
        assert!(ExperimentConfig::from_toml_str("[augmp]\nvisibility = 0.0").is_err());
        let e = ExperimentConfig::default()
            .with_override("rounds")
            .unwrap_err();
        assert!(e.to_string().contains("key=value"));
        assert!(ExperimentConfig::default()
            .with_override("seed.x=1")
            .is_err());
    }
}
