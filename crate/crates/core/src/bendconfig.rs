//! YAML transform configurations.
//!
//! ```yaml
//! seed: 0
//! transforms:
//!   - layer: 5
//!     transform: scale
//!     params: [0.6, 0.6]
//!     layer_type: cluster
//!     layer_type_param: 2
//! ```
//!
//! Every record has exactly those five items. `layer_type` is `all`,
//! `cluster` (param: cluster index) or `random` (param: fraction of
//! features). The optional top-level `seed` drives random selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yaml_rust2::parser::{Event, MarkedEventReceiver, Parser};
use yaml_rust2::scanner::{Marker, TScalarStyle};

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::generator::{Hook, ModelDescriptor};
use crate::transforms::{Axis, TransformKind};

const RECORD_KEYS: [&str; 5] = ["layer", "transform", "params", "layer_type", "layer_type_param"];

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSelector {
    All,
    Cluster(usize),
    /// Each feature is picked independently with this probability.
    Random(f64),
}

impl FeatureSelector {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureSelector::All => "all",
            FeatureSelector::Cluster(_) => "cluster",
            FeatureSelector::Random(_) => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformSpec {
    pub layer: usize,
    pub transform: TransformKind,
    pub selector: FeatureSelector,
    /// Source line of the record, 0 when built in code.
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BendConfig {
    pub seed: u64,
    pub transforms: Vec<TransformSpec>,
}

#[derive(Clone, Copy, Debug)]
struct Pos {
    line: usize,
    col: usize,
}

impl From<Marker> for Pos {
    fn from(m: Marker) -> Self {
        Pos {
            line: m.line(),
            col: m.col() + 1,
        }
    }
}

// A YAML node with the position it started at.
#[derive(Debug)]
enum Node {
    Scalar { value: String, plain: bool, pos: Pos },
    Seq { items: Vec<Node>, pos: Pos },
    Map { entries: Vec<(Node, Node)>, pos: Pos },
}

impl Node {
    fn pos(&self) -> Pos {
        match self {
            Node::Scalar { pos, .. } | Node::Seq { pos, .. } | Node::Map { pos, .. } => *pos,
        }
    }

    fn is_null(&self) -> bool {
        matches!(self, Node::Scalar { value, plain: true, .. }
            if matches!(value.as_str(), "" | "~" | "null" | "Null" | "NULL"))
    }
}

enum Frame {
    Seq(Vec<Node>, Pos),
    Map(Vec<(Node, Node)>, Option<Node>, Pos),
}

#[derive(Default)]
struct TreeBuilder {
    stack: Vec<Frame>,
    root: Option<Node>,
    error: Option<(Pos, String)>,
}

impl TreeBuilder {
    fn push_value(&mut self, node: Node) {
        match self.stack.last_mut() {
            Some(Frame::Seq(items, _)) => items.push(node),
            Some(Frame::Map(entries, key, _)) => match key.take() {
                Some(k) => entries.push((k, node)),
                None => *key = Some(node),
            },
            None => self.root = Some(node),
        }
    }
}

impl MarkedEventReceiver for TreeBuilder {
    fn on_event(&mut self, ev: Event, mark: Marker) {
        if self.error.is_some() {
            return;
        }
        let pos = Pos::from(mark);
        match ev {
            Event::Scalar(value, style, _, _) => self.push_value(Node::Scalar {
                value,
                plain: style == TScalarStyle::Plain,
                pos,
            }),
            Event::SequenceStart(..) => self.stack.push(Frame::Seq(Vec::new(), pos)),
            Event::MappingStart(..) => self.stack.push(Frame::Map(Vec::new(), None, pos)),
            Event::SequenceEnd | Event::MappingEnd => {
                let node = match self.stack.pop() {
                    Some(Frame::Seq(items, pos)) => Node::Seq { items, pos },
                    Some(Frame::Map(entries, _, pos)) => Node::Map { entries, pos },
                    None => return,
                };
                self.push_value(node);
            }
            Event::Alias(_) => self.error = Some((pos, "anchors and aliases are not supported".into())),
            _ => {}
        }
    }
}

fn err(pos: Pos, field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        line: pos.line,
        col: pos.col,
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn parse_tree(text: &str) -> Result<Option<Node>> {
    let mut builder = TreeBuilder::default();
    Parser::new_from_str(text)
        .load(&mut builder, false)
        .map_err(|e| err(Pos::from(*e.marker()), "", format!("malformed YAML: {}", e.info())))?;
    if let Some((mark, msg)) = builder.error {
        return Err(err(mark, "", msg));
    }
    Ok(builder.root)
}

fn scalar<'a>(node: &'a Node, field: &str) -> Result<(&'a str, bool)> {
    match node {
        Node::Scalar { value, plain, .. } => Ok((value, *plain)),
        other => Err(err(other.pos(), field, "expected a single value")),
    }
}

fn number(node: &Node, field: &str) -> Result<f64> {
    let (s, plain) = scalar(node, field)?;
    match s.parse::<f64>() {
        Ok(v) if plain && v.is_finite() => Ok(v),
        _ => Err(err(node.pos(), field, format!("expected a finite number, got `{s}`"))),
    }
}

fn whole(node: &Node, field: &str) -> Result<u64> {
    let v = number(node, field)?;
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 * u32::MAX as f64 {
        return Err(err(node.pos(), field, format!("expected a non-negative integer, got {v}")));
    }
    Ok(v as u64)
}

fn name(node: &Node, field: &str) -> Result<String> {
    Ok(scalar(node, field)?.0.to_string())
}

/// Collect a mapping's entries by key, rejecting duplicates and keys not
/// in `allowed`.
fn entries<'a>(node: &'a Node, allowed: &[&str], what: &str) -> Result<BTreeMap<String, (&'a Node, Pos)>> {
    let Node::Map { entries, .. } = node else {
        return Err(err(node.pos(), what, format!("{what} must be a mapping")));
    };
    let mut out = BTreeMap::new();
    for (k, v) in entries {
        let key = name(k, what)?;
        if !allowed.contains(&key.as_str()) {
            return Err(err(
                k.pos(),
                &key,
                format!("unknown item `{key}` (expected one of: {})", allowed.join(", ")),
            ));
        }
        if out.insert(key.clone(), (v, k.pos())).is_some() {
            return Err(err(k.pos(), &key, "duplicate item"));
        }
    }
    Ok(out)
}

fn params_of(node: &Node) -> Result<Vec<&Node>> {
    Ok(match node {
        Node::Seq { items, .. } => items.iter().collect(),
        n if n.is_null() => Vec::new(),
        n @ Node::Scalar { .. } => vec![n],
        n => return Err(err(n.pos(), "params", "params must be a list")),
    })
}

fn parse_transform(kind: &str, kind_node: &Node, params_node: &Node) -> Result<TransformKind> {
    let Some(arity) = TransformKind::arity(kind) else {
        return Err(err(
            kind_node.pos(),
            "transform",
            format!("unknown transform `{kind}` (expected one of: {})", TransformKind::NAMES.join(", ")),
        ));
    };
    let p = params_of(params_node)?;
    if p.len() != arity {
        let plural = if arity == 1 { "" } else { "s" };
        return Err(err(
            params_node.pos(),
            "params",
            format!("{kind} expects {arity} param{plural}, got {}", p.len()),
        ));
    }
    let num = |i: usize| number(p[i], "params");
    let t = match kind {
        "ablate" => TransformKind::Ablate,
        "invert" => TransformKind::Invert,
        "scalar_multiply" => TransformKind::ScalarMultiply { factor: num(0)? },
        "binary_threshold" => TransformKind::BinaryThreshold { threshold: num(0)? },
        "reflect" => {
            let axis = match scalar(p[0], "params")?.0 {
                "horizontal" | "0" => Axis::Horizontal,
                "vertical" | "1" => Axis::Vertical,
                other => {
                    return Err(err(
                        p[0].pos(),
                        "params",
                        format!("reflect axis must be horizontal or vertical, got `{other}`"),
                    ))
                }
            };
            TransformKind::Reflect { axis }
        }
        "translate" => TransformKind::Translate { dx: num(0)?, dy: num(1)? },
        "scale" => TransformKind::Scale { kx: num(0)?, ky: num(1)? },
        "rotate" => TransformKind::Rotate { degrees: num(0)? },
        "erode" | "dilate" => {
            let r = whole(p[0], "params")?;
            let radius = u32::try_from(r).map_err(|_| err(p[0].pos(), "params", "radius too large"))?;
            if kind == "erode" {
                TransformKind::Erode { radius }
            } else {
                TransformKind::Dilate { radius }
            }
        }
        _ => unreachable!("arity() covers every name"),
    };
    t.validate().map_err(|e| err(params_node.pos(), "params", e.to_string()))?;
    Ok(t)
}

fn parse_record(node: &Node) -> Result<TransformSpec> {
    let items = entries(node, &RECORD_KEYS, "transform record")?;
    for key in RECORD_KEYS {
        if !items.contains_key(key) {
            return Err(err(node.pos(), key, "missing required item"));
        }
    }
    let get = |k: &str| items[k].0;

    let layer_node = get("layer");
    let layer = whole(layer_node, "layer")?;
    if layer == 0 {
        return Err(err(layer_node.pos(), "layer", "layers are numbered from 1"));
    }
    let kind = name(get("transform"), "transform")?;
    let transform = parse_transform(&kind, get("transform"), get("params"))?;

    let sel_node = get("layer_type");
    let param = get("layer_type_param");
    let selector = match name(sel_node, "layer_type")?.as_str() {
        "all" => {
            if !param.is_null() {
                number(param, "layer_type_param")?;
            }
            FeatureSelector::All
        }
        "cluster" => FeatureSelector::Cluster(whole(param, "layer_type_param")? as usize),
        "random" => FeatureSelector::Random(number(param, "layer_type_param")?),
        other => {
            return Err(err(
                sel_node.pos(),
                "layer_type",
                format!("unknown layer_type `{other}` (expected all, cluster or random)"),
            ))
        }
    };
    Ok(TransformSpec {
        layer: layer as usize,
        transform,
        selector,
        line: node.pos().line,
    })
}

/// Parse a configuration document. Records keep their file order.
pub fn parse_config(text: &str) -> Result<BendConfig> {
    let Some(root) = parse_tree(text)? else {
        return Err(err(Pos { line: 1, col: 1 }, "transforms", "empty document"));
    };
    let top = entries(&root, &["seed", "transforms"], "document")?;
    let Some(&(list, key_mark)) = top.get("transforms") else {
        return Err(err(root.pos(), "transforms", "missing required item"));
    };
    let seed = match top.get("seed") {
        Some((n, _)) => whole(n, "seed")?,
        None => 0,
    };
    let records: &[Node] = match list {
        Node::Seq { items, .. } => items,
        n => return Err(err(if n.is_null() { key_mark } else { n.pos() }, "transforms", "must be a list")),
    };
    let transforms = records.iter().map(parse_record).collect::<Result<_>>()?;
    Ok(BendConfig { seed, transforms })
}

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

impl TransformSpec {
    pub fn new(layer: usize, transform: TransformKind, selector: FeatureSelector) -> Self {
        TransformSpec {
            layer,
            transform,
            selector,
            line: 0,
        }
    }

    fn params_yaml(&self) -> String {
        let items: Vec<String> = match &self.transform {
            TransformKind::Ablate | TransformKind::Invert => vec![],
            TransformKind::ScalarMultiply { factor: v }
            | TransformKind::BinaryThreshold { threshold: v }
            | TransformKind::Rotate { degrees: v } => vec![fmt_num(*v)],
            TransformKind::Reflect { axis } => vec![axis.name().to_string()],
            TransformKind::Translate { dx, dy } => vec![fmt_num(*dx), fmt_num(*dy)],
            TransformKind::Scale { kx, ky } => vec![fmt_num(*kx), fmt_num(*ky)],
            TransformKind::Erode { radius } | TransformKind::Dilate { radius } => vec![radius.to_string()],
        };
        format!("[{}]", items.join(", "))
    }
}

impl BendConfig {
    /// Canonical YAML form; parsing it gives back an equal config (up to
    /// source lines).
    pub fn to_yaml(&self) -> String {
        let mut s = format!("seed: {}\n", self.seed);
        if self.transforms.is_empty() {
            s.push_str("transforms: []\n");
            return s;
        }
        s.push_str("transforms:\n");
        for t in &self.transforms {
            let param = match t.selector {
                FeatureSelector::All => "null".to_string(),
                FeatureSelector::Cluster(c) => c.to_string(),
                FeatureSelector::Random(q) => fmt_num(q),
            };
            let _ = write!(
                s,
                "  - layer: {}\n    transform: {}\n    params: {}\n    layer_type: {}\n    layer_type_param: {}\n",
                t.layer,
                t.transform.name(),
                t.params_yaml(),
                t.selector.name(),
                param
            );
        }
        s
    }

    /// Check every record against the model and the available cluster
    /// models. Errors carry the record's 1-based position and line.
    pub fn validate_against(
        &self,
        descriptor: &ModelDescriptor,
        clusters: Option<&BTreeMap<usize, ClusterModel>>,
    ) -> Result<()> {
        let n = descriptor.layer_count();
        for (i, t) in self.transforms.iter().enumerate() {
            let fail = |msg: String| {
                Err(Error::Validation {
                    position: i + 1,
                    line: t.line,
                    msg,
                })
            };
            let Some(layer) = descriptor.layer(t.layer) else {
                return fail(format!("layer {} not in model (1..{n})", t.layer));
            };
            if let Err(e) = t.transform.validate() {
                return fail(e.to_string());
            }
            match t.selector {
                FeatureSelector::All => {}
                FeatureSelector::Random(q) => {
                    if !(0.0..=1.0).contains(&q) {
                        return fail(format!("random fraction {q} outside [0, 1]"));
                    }
                }
                FeatureSelector::Cluster(c) => {
                    let Some(model) = clusters.and_then(|m| m.get(&t.layer)) else {
                        return fail(format!("cluster model required for layer {}", t.layer));
                    };
                    if model.feature_count() != layer.feature_count {
                        return fail(format!(
                            "cluster model for layer {} covers {} features, layer has {}",
                            t.layer,
                            model.feature_count(),
                            layer.feature_count
                        ));
                    }
                    if c >= model.k {
                        return fail(format!(
                            "cluster {c} out of range: layer {} has {} clusters",
                            t.layer, model.k
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Validate, then turn every record into a hook with concrete feature
    /// indices, in file order.
    pub fn resolve(
        &self,
        descriptor: &ModelDescriptor,
        clusters: Option<&BTreeMap<usize, ClusterModel>>,
    ) -> Result<Vec<Hook>> {
        self.validate_against(descriptor, clusters)?;
        Ok(self
            .transforms
            .iter()
            .enumerate()
            .map(|(position, t)| {
                let features = descriptor.layer(t.layer).expect("validated").feature_count;
                let selected = match t.selector {
                    FeatureSelector::All => (0..features).collect(),
                    FeatureSelector::Cluster(c) => clusters.and_then(|m| m.get(&t.layer)).expect("validated").members(c),
                    FeatureSelector::Random(q) => random_subset(features, q, self.seed, t.layer, position),
                };
                Hook {
                    layer: t.layer,
                    features: selected,
                    transform: t.transform.clone(),
                }
            })
            .collect())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bernoulli(`fraction`) pick of each of `features` indices, seeded by
/// `(seed, layer, position)`.
pub fn random_subset(features: usize, fraction: f64, seed: u64, layer: usize, position: usize) -> Vec<usize> {
    let key = splitmix(splitmix(splitmix(seed) ^ layer as u64) ^ position as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..features).filter(|_| rng.random::<f64>() < fraction).collect()
}
