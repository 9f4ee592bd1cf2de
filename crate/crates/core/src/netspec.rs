//! Network descriptions and the per-layer quantities every cost formula uses.
//!
//! A network is an input tensor shape followed by an ordered chain of
//! convolutional and fully connected layers. Convolutions use "same" padding,
//! so a stride-`s` convolution maps an extent `x` to `ceil(x / s)`. Pooling is
//! not a layer of its own: a convolution may carry a `pool_divisor` `d`, which
//! models a `(2d - 1)`-wide, stride-`d` pooling window applied before the next
//! layer (`d = 2` is the usual 3x3/2 overlapping max-pool, `d = 1` is a no-op).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ALEXNET_DOC: &str = include_str!("../presets/alexnet.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub height: u64,
    pub width: u64,
    pub channels: u64,
}

impl InputShape {
    pub fn new(height: u64, width: u64, channels: u64) -> Self {
        Self { height, width, channels }
    }

    pub fn len(&self) -> u64 {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel_h: u64,
    pub kernel_w: u64,
    pub stride: u64,
    pub out_channels: u64,
    /// `None` and `Some(1)` both mean no pooling.
    pub pool_divisor: Option<u64>,
}

impl ConvLayer {
    pub fn new(kernel_h: u64, kernel_w: u64, stride: u64, out_channels: u64) -> Self {
        Self { kernel_h, kernel_w, stride, out_channels, pool_divisor: None }
    }

    pub fn with_pool(mut self, divisor: u64) -> Self {
        self.pool_divisor = Some(divisor);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDef {
    Conv(ConvLayer),
    FullyConnected { out_features: u64 },
}

impl LayerDef {
    pub fn conv(kernel_h: u64, kernel_w: u64, stride: u64, out_channels: u64) -> Self {
        LayerDef::Conv(ConvLayer::new(kernel_h, kernel_w, stride, out_channels))
    }

    pub fn fc(out_features: u64) -> Self {
        LayerDef::FullyConnected { out_features }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerDef::Conv(_))
    }

    pub fn as_conv(&self) -> Option<&ConvLayer> {
        match self {
            LayerDef::Conv(c) => Some(c),
            LayerDef::FullyConnected { .. } => None,
        }
    }
}

/// Derived sizes of one layer. `y_*` describe the activation handed to the
/// next layer, i.e. after any pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub x_h: u64,
    pub x_w: u64,
    pub x_c: u64,
    pub y_h: u64,
    pub y_w: u64,
    pub y_c: u64,
    pub d_in: u64,
    pub d_out: u64,
    pub weight_count: u64,
}

/// A layer definition together with its derived dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer<'a> {
    pub index: usize,
    pub def: &'a LayerDef,
    pub dims: &'a LayerDims,
}

impl Layer<'_> {
    pub fn conv(&self) -> Option<&ConvLayer> {
        self.def.as_conv()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    input: InputShape,
    layers: Vec<LayerDef>,
    dims: Vec<LayerDims>,
    sample_count: u64,
}

impl NetworkSpec {
    pub fn new(input: InputShape, layers: Vec<LayerDef>, sample_count: u64) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::invalid("samples", "must be >= 1"));
        }
        let dims = derive_dims(input, &layers)?;
        Ok(Self { input, layers, dims, sample_count })
    }

    /// A chain of fully connected layers `sizes[0] -> sizes[1] -> ...`, with
    /// the input presented as a flat `1 x 1 x sizes[0]` tensor.
    pub fn fully_connected(sizes: &[u64], sample_count: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("layers", "need an input size and at least one layer"));
        }
        let layers = sizes[1..].iter().map(|&d| LayerDef::fc(d)).collect();
        Self::new(InputShape::new(1, 1, sizes[0]), layers, sample_count)
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerDef] {
        &self.layers
    }

    pub fn dims(&self) -> &[LayerDims] {
        &self.dims
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, index: usize) -> Layer<'_> {
        Layer { index, def: &self.layers[index], dims: &self.dims[index] }
    }

    pub fn iter(&self) -> impl Iterator<Item = Layer<'_>> + '_ {
        (0..self.layers.len()).map(move |i| self.layer(i))
    }

    pub fn total_weights(&self) -> u64 {
        self.dims.iter().map(|d| d.weight_count).sum()
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn pooled(extent: u64, divisor: u64) -> Option<u64> {
    // window 2d-1, stride d, no padding: floor((y - (2d-1)) / d) + 1
    if divisor <= 1 {
        return Some(extent);
    }
    let window = 2 * divisor - 1;
    (extent >= window).then(|| (extent - window) / divisor + 1)
}

fn positive(value: u64, field: impl FnOnce() -> String) -> Result<()> {
    if value == 0 {
        Err(Error::invalid(field(), "must be >= 1"))
    } else {
        Ok(())
    }
}

pub fn derive_dims(input: InputShape, layers: &[LayerDef]) -> Result<Vec<LayerDims>> {
    if layers.is_empty() {
        return Err(Error::invalid("layers", "layer list is empty"));
    }
    positive(input.height, || "input.h".into())?;
    positive(input.width, || "input.w".into())?;
    positive(input.channels, || "input.c".into())?;

    let (mut h, mut w, mut c) = (input.height, input.width, input.channels);
    let mut flattened = false;
    let mut dims = Vec::with_capacity(layers.len());

    for (i, layer) in layers.iter().enumerate() {
        let d_in = h * w * c;
        let out = match *layer {
            LayerDef::Conv(conv) => {
                if flattened {
                    return Err(Error::invalid(
                        format!("layers[{i}].type"),
                        "convolution after a fully connected layer",
                    ));
                }
                positive(conv.kernel_h, || format!("layers[{i}].kh"))?;
                positive(conv.kernel_w, || format!("layers[{i}].kw"))?;
                positive(conv.stride, || format!("layers[{i}].stride"))?;
                positive(conv.out_channels, || format!("layers[{i}].out_channels"))?;
                if let Some(d) = conv.pool_divisor {
                    positive(d, || format!("layers[{i}].pool_divisor"))?;
                }
                if conv.stride > h || conv.stride > w {
                    return Err(Error::invalid(
                        format!("layers[{i}].stride"),
                        format!("stride {} exceeds spatial extent {h}x{w}", conv.stride),
                    ));
                }
                let divisor = conv.pool_divisor.unwrap_or(1);
                let (y_h, y_w) = match (
                    pooled(ceil_div(h, conv.stride), divisor),
                    pooled(ceil_div(w, conv.stride), divisor),
                ) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::invalid(
                            format!("layers[{i}].pool_divisor"),
                            "pooling window larger than the convolution output",
                        ))
                    }
                };
                LayerDims {
                    x_h: h,
                    x_w: w,
                    x_c: c,
                    y_h,
                    y_w,
                    y_c: conv.out_channels,
                    d_in,
                    d_out: y_h * y_w * conv.out_channels,
                    weight_count: conv.kernel_h * conv.kernel_w * c * conv.out_channels,
                }
            }
            LayerDef::FullyConnected { out_features } => {
                positive(out_features, || format!("layers[{i}].out"))?;
                flattened = true;
                LayerDims {
                    x_h: 1,
                    x_w: 1,
                    x_c: d_in,
                    y_h: 1,
                    y_w: 1,
                    y_c: out_features,
                    d_in,
                    d_out: out_features,
                    weight_count: d_in * out_features,
                }
            }
        };
        h = out.y_h;
        w = out.y_w;
        c = out.y_c;
        dims.push(out);
    }
    Ok(dims)
}

// ---- document form ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    input: InputDoc,
    samples: u64,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    h: u64,
    w: u64,
    c: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum LayerDoc {
    Conv {
        kh: u64,
        kw: u64,
        stride: u64,
        out_channels: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_divisor: Option<u64>,
    },
    Fc {
        out: u64,
    },
}

pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let layers = doc
        .layers
        .into_iter()
        .map(|l| match l {
            LayerDoc::Conv { kh, kw, stride, out_channels, pool_divisor } => LayerDef::Conv(ConvLayer {
                kernel_h: kh,
                kernel_w: kw,
                stride,
                out_channels,
                pool_divisor,
            }),
            LayerDoc::Fc { out } => LayerDef::fc(out),
        })
        .collect();
    NetworkSpec::new(InputShape::new(doc.input.h, doc.input.w, doc.input.c), layers, doc.samples)
}

pub fn serialize_network(net: &NetworkSpec) -> String {
    let doc = NetworkDoc {
        input: InputDoc { h: net.input.height, w: net.input.width, c: net.input.channels },
        samples: net.sample_count,
        layers: net
            .layers
            .iter()
            .map(|l| match *l {
                LayerDef::Conv(c) => LayerDoc::Conv {
                    kh: c.kernel_h,
                    kw: c.kernel_w,
                    stride: c.stride,
                    out_channels: c.out_channels,
                    pool_divisor: c.pool_divisor,
                },
                LayerDef::FullyConnected { out_features } => LayerDoc::Fc { out: out_features },
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("network document serializes")
}

/// AlexNet as an ungrouped 5-conv + 3-FC chain on 227x227x3 inputs.
///
/// The two-tower grouping of the original is flattened by giving conv2 the
/// width of a single tower (128 filters), which keeps conv2 at the grouped
/// parameter count while conv3..conv5 stay ungrouped. Total: 61,618,208
/// weights.
pub fn alexnet_preset() -> NetworkSpec {
    parse_network(ALEXNET_DOC).expect("bundled AlexNet preset is valid")
}

pub fn alexnet_document() -> &'static str {
    ALEXNET_DOC
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv3x3_on_13x13x384() {
        let dims = derive_dims(InputShape::new(13, 13, 384), &[LayerDef::conv(3, 3, 1, 384)]).unwrap();
        assert_eq!(dims[0].weight_count, 1_327_104);
        assert_eq!(dims[0].d_out, 64_896);
        assert_eq!(dims[0].d_in, 64_896);
    }

    #[test]
    fn fc_9216_to_4096() {
        let dims = derive_dims(InputShape::new(6, 6, 256), &[LayerDef::fc(4096)]).unwrap();
        assert_eq!(dims[0].d_in, 9216);
        assert_eq!(dims[0].weight_count, 37_748_736);
        assert_eq!((dims[0].x_h, dims[0].x_w, dims[0].x_c), (1, 1, 9216));
        assert_eq!((dims[0].y_h, dims[0].y_w, dims[0].y_c), (1, 1, 4096));
    }

    #[test]
    fn pointwise_conv_keeps_spatial_extent() {
        let dims = derive_dims(InputShape::new(17, 9, 32), &[LayerDef::conv(1, 1, 1, 64)]).unwrap();
        assert_eq!((dims[0].y_h, dims[0].y_w), (17, 9));
        assert_eq!(dims[0].weight_count, 32 * 64);
    }

    #[test]
    fn padded_stride_rounds_up() {
        let dims = derive_dims(InputShape::new(227, 227, 3), &[LayerDef::conv(11, 11, 4, 96)]).unwrap();
        assert_eq!((dims[0].y_h, dims[0].y_w), (57, 57));
    }

    #[test]
    fn pooling_divisor_two_is_overlapping_3x3_stride_2() {
        assert_eq!(pooled(55, 2), Some(27));
        assert_eq!(pooled(57, 2), Some(28));
        assert_eq!(pooled(28, 2), Some(13));
        assert_eq!(pooled(13, 2), Some(6));
        assert_eq!(pooled(13, 1), Some(13));
        assert_eq!(pooled(2, 2), None);
    }

    #[test]
    fn rejects_empty_and_bad_stride() {
        assert!(derive_dims(InputShape::new(4, 4, 1), &[]).is_err());
        let err = derive_dims(InputShape::new(4, 4, 1), &[LayerDef::conv(3, 3, 5, 2)]).unwrap_err();
        assert!(err.to_string().contains("stride"), "{err}");
        let err = derive_dims(InputShape::new(4, 4, 1), &[LayerDef::conv(3, 3, 0, 2)]).unwrap_err();
        assert!(err.to_string().contains("layers[0].stride"), "{err}");
    }

    #[test]
    fn conv_after_fc_is_rejected() {
        let err = derive_dims(InputShape::new(8, 8, 1), &[LayerDef::fc(10), LayerDef::conv(1, 1, 1, 1)]);
        assert!(err.is_err());
    }

    #[test]
    fn alexnet_shape() {
        let net = alexnet_preset();
        assert_eq!(net.len(), 8);
        assert_eq!(net.layers().iter().filter(|l| l.is_conv()).count(), 5);
        let total = net.total_weights();
        assert!((60_000_000..=62_000_000).contains(&total), "total {total}");
        assert_eq!(total, 61_618_208);
        assert_eq!(net.sample_count(), 1_200_000);
        let first = net.layers()[0].as_conv().unwrap();
        assert_eq!((first.kernel_h, first.kernel_w, first.stride, first.out_channels), (11, 11, 4, 96));
        assert_eq!(net.input(), InputShape::new(227, 227, 3));
        // conv4 sees the 13x13x384 activation
        let conv4 = net.dims()[3];
        assert_eq!((conv4.x_h, conv4.x_w, conv4.x_c), (13, 13, 384));
        assert_eq!(net.dims()[5].d_in, 9216);
    }

    #[test]
    fn parse_minimal_and_errors() {
        let net = parse_network(
            r#"{"input": {"h": 8, "w": 8, "c": 3}, "samples": 10,
                "layers": [{"type": "conv", "kh": 3, "kw": 3, "stride": 1, "out_channels": 4}]}"#,
        )
        .unwrap();
        assert_eq!(net.len(), 1);

        let err = parse_network(
            r#"{"input": {"h": 8, "w": 8, "c": 3}, "samples": 10,
                "layers": [{"type": "conv", "kh": 3, "kw": 3, "stride": 0, "out_channels": 4}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("stride"));

        let err = parse_network(
            r#"{"input": {"h": 8, "w": 8, "c": 3}, "samples": 10,
                "layers": [{"type": "fc", "out": 4, "bias": true}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");

        let err = parse_network(r#"{"input": {"h": 8, "w": 8}, "samples": 1, "layers": []}"#).unwrap_err();
        assert!(err.to_string().contains("`c`"), "{err}");

        let err = parse_network(r#"{"input": {"h": 8, "w": 8, "c": 1}, "samples": 1, "layers": [], "x": 1}"#)
            .unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn alexnet_round_trips() {
        let net = alexnet_preset();
        assert_eq!(parse_network(&serialize_network(&net)).unwrap(), net);
    }
}
