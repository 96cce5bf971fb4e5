//! JSON weight files for [`SineMlp`], optionally carrying checkpoint
//! metadata.
//!
//! ```json
//! {"format_version":1,"layer_sizes":[3,64,1],"omega0":3.0,"input_center":[...],
//!  "input_halfwidth":[...],"time_conditioned":false,
//!  "layers":[{"w":[...],"b":[...]}],"metadata":{"epoch":10,...}}
//! ```
//!
//! `w` is row-major `out × in`. Every number is written with 17 significant
//! digits so a save/load round trip is bit-exact.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tubeverify_core::value_fn::Layer;
use tubeverify_core::SineMlp;

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("cannot read or write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed weight file at line {line}, column {column}, field `{field}`: {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("unsupported weight format version {0}")]
    Version(u32),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Training state stored alongside a checkpoint's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epoch: usize,
    /// Worst value over unsafe validation states; absent when there were none.
    pub metric: Option<f64>,
    pub train_loss: Option<f64>,
    pub validation_loss: Option<f64>,
    #[serde(default)]
    pub selected: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsJson {
    format_version: u32,
    layer_sizes: Vec<usize>,
    omega0: f64,
    input_center: Vec<f64>,
    input_halfwidth: Vec<f64>,
    #[serde(default)]
    time_conditioned: bool,
    layers: Vec<LayerJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<CheckpointMeta>,
}

/// Compact JSON with finite doubles in `d.dddddddddddddddde±x` form.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json_string(net: &SineMlp, metadata: Option<&CheckpointMeta>) -> String {
    let doc = WeightsJson {
        format_version: WEIGHTS_FORMAT_VERSION,
        layer_sizes: net.layer_sizes().to_vec(),
        omega0: net.omega0(),
        input_center: net.input_center().to_vec(),
        input_halfwidth: net.input_halfwidth().to_vec(),
        time_conditioned: net.time_conditioned(),
        layers: net.layers().iter().map(|l| LayerJson { w: l.w.clone(), b: l.b.clone() }).collect(),
        metadata: metadata.cloned(),
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    doc.serialize(&mut ser).expect("serializing to memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON output is UTF-8")
}

pub fn from_json_str(text: &str) -> Result<(SineMlp, Option<CheckpointMeta>), WeightsError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let doc: WeightsJson = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        WeightsError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
    })?;
    if doc.format_version != WEIGHTS_FORMAT_VERSION {
        return Err(WeightsError::Version(doc.format_version));
    }
    let layers = doc.layers.into_iter().map(|l| Layer { w: l.w, b: l.b }).collect();
    let net = SineMlp::from_parts(
        doc.layer_sizes,
        doc.omega0,
        doc.input_center,
        doc.input_halfwidth,
        doc.time_conditioned,
        layers,
    )
    .map_err(|e| WeightsError::Shape(e.to_string()))?;
    Ok((net, doc.metadata))
}

pub fn save_weights(net: &SineMlp, metadata: Option<&CheckpointMeta>, path: &Path) -> Result<(), WeightsError> {
    fs::write(path, to_json_string(net, metadata))
        .map_err(|source| WeightsError::Io { path: path.display().to_string(), source })
}

pub fn load_weights(path: &Path) -> Result<(SineMlp, Option<CheckpointMeta>), WeightsError> {
    let text =
        fs::read_to_string(path).map_err(|source| WeightsError::Io { path: path.display().to_string(), source })?;
    from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tubeverify_core::ValueFunction;

    fn net() -> SineMlp {
        SineMlp::siren(&[3, 5, 4, 1], 30.0, vec![0.1, -0.2, 0.0], vec![1.0, 2.0, 3.0], false, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let meta = CheckpointMeta {
            epoch: 4,
            metric: Some(-0.25),
            train_loss: Some(1.0 / 3.0),
            validation_loss: None,
            selected: true,
        };
        let (back, m) = from_json_str(&to_json_string(&n, Some(&meta))).unwrap();
        assert_eq!(back, n);
        assert_eq!(m, Some(meta));
        for i in 0..100 {
            let x = [i as f64 * 0.013 - 0.6, (i as f64).sin(), 0.5 - i as f64 * 0.01];
            assert_eq!(back.eval(&x).to_bits(), n.eval(&x).to_bits());
        }
    }

    #[test]
    fn numbers_carry_seventeen_digits() {
        let text = to_json_string(&net(), None);
        assert!(text.contains("\"omega0\":3.0000000000000000e1"), "{text}");
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = to_json_string(&net(), None);
        match from_json_str(&text[..text.len() / 2]) {
            Err(WeightsError::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_field_is_named() {
        let text = to_json_string(&net(), None).replace("\"omega0\":3.0000000000000000e1", "\"omega0\":\"fast\"");
        match from_json_str(&text) {
            Err(WeightsError::Parse { field, .. }) => assert_eq!(field, "omega0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_sizes_are_a_shape_error() {
        let text = to_json_string(&net(), None).replace("\"layer_sizes\":[3,5,4,1]", "\"layer_sizes\":[3,6,4,1]");
        assert!(matches!(from_json_str(&text), Err(WeightsError::Shape(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = to_json_string(&net(), None).replace("\"format_version\":1", "\"format_version\":7");
        assert!(matches!(from_json_str(&text), Err(WeightsError::Version(7))));
    }
}
