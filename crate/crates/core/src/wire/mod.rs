//! V2V payload formats: quantized head-map messages, box messages,
//! little-endian serialization with a versioned header, byte-stream
//! compression, and bandwidth accounting.

mod bandwidth;
mod codec;

pub use bandwidth::{
    builtin_presets, mbps, preset_by_name, preset_report, report_from_samples, BandwidthPreset,
    BandwidthReport, BandwidthRow, StrategySamples,
};
pub use codec::Codec;

use crate::error::{CoreError, Result};
use crate::geometry::{BEVGridSpec, Box3D, Pose2D};
use crate::heads::{ClassificationMap, RegressionMap, REG_TARGETS};
use crate::tensor::GridMap;

const MAGIC: &[u8; 8] = b"HEADMSG1";
const VERSION: u16 = 1;
const TYPE_BOX: u8 = 0;
const TYPE_HEAD: u8 = 1;

/// How a payload's values are packed on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizationSpec {
    Float32,
    /// Per-channel linear quantization: value = (q - zero_point) * scale.
    Uint8Linear { scale: Vec<f32>, zero_point: Vec<u8> },
}

impl QuantizationSpec {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if let QuantizationSpec::Uint8Linear { scale, zero_point } = self {
            if scale.len() != channels || zero_point.len() != channels {
                return Err(CoreError::rejected(
                    "quantization spec channel count mismatch",
                ));
            }
            if scale.iter().any(|s| *s <= 0.0) {
                return Err(CoreError::rejected("quantization scale must be positive"));
            }
        }
        Ok(())
    }

    /// Derive a per-channel uint8 spec covering each channel's value range.
    pub fn uint8_auto(map: &GridMap) -> Self {
        let hw = map.height() * map.width();
        let mut scale = Vec::with_capacity(map.channels());
        let mut zero_point = Vec::with_capacity(map.channels());
        for c in 0..map.channels() {
            let vals = &map.values()[c * hw..(c + 1) * hw];
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            let s = if range > 0.0 {
                range / 255.0
            } else {
                // constant channel: any positive scale reproduces it exactly
                (lo.abs() / 127.0).max(1e-9)
            };
            let z = (-lo / s).round().clamp(0.0, 255.0) as u8;
            scale.push(s as f32);
            zero_point.push(z);
        }
        QuantizationSpec::Uint8Linear { scale, zero_point }
    }
}

/// Quantized channel payload as carried in a `HeadMessage`.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedPayload {
    F32 { channels: usize, data: Vec<f32> },
    U8 {
        channels: usize,
        scale: Vec<f32>,
        zero_point: Vec<u8>,
        data: Vec<u8>,
    },
}

impl QuantizedPayload {
    pub fn channels(&self) -> usize {
        match self {
            QuantizedPayload::F32 { channels, .. } | QuantizedPayload::U8 { channels, .. } => {
                *channels
            }
        }
    }

    fn encode(map: &GridMap, spec: &QuantizationSpec) -> Result<Self> {
        spec.validate(map.channels())?;
        let hw = map.height() * map.width();
        match spec {
            QuantizationSpec::Float32 => Ok(QuantizedPayload::F32 {
                channels: map.channels(),
                data: map.values().iter().map(|v| *v as f32).collect(),
            }),
            QuantizationSpec::Uint8Linear { scale, zero_point } => {
                let mut data = Vec::with_capacity(map.channels() * hw);
                for c in 0..map.channels() {
                    let s = scale[c] as f64;
                    let z = zero_point[c] as f64;
                    for v in &map.values()[c * hw..(c + 1) * hw] {
                        let q = (v / s).round() + z;
                        data.push(q.clamp(0.0, 255.0) as u8);
                    }
                }
                Ok(QuantizedPayload::U8 {
                    channels: map.channels(),
                    scale: scale.clone(),
                    zero_point: zero_point.clone(),
                    data,
                })
            }
        }
    }

    fn decode(&self, height: usize, width: usize, validity: &[bool]) -> Result<GridMap> {
        let hw = height * width;
        let values: Vec<f64> = match self {
            QuantizedPayload::F32 { data, .. } => data.iter().map(|v| f64::from(*v)).collect(),
            QuantizedPayload::U8 {
                channels,
                scale,
                zero_point,
                data,
            } => {
                let mut out = Vec::with_capacity(data.len());
                for c in 0..*channels {
                    let s = f64::from(scale[c]);
                    let z = f64::from(zero_point[c]);
                    for q in &data[c * hw..(c + 1) * hw] {
                        out.push((f64::from(*q) - z) * s);
                    }
                }
                out
            }
        };
        GridMap::from_values(self.channels(), height, width, values)?
            .with_validity(validity.to_vec())
    }

    fn values_len(&self) -> usize {
        match self {
            QuantizedPayload::F32 { data, .. } => data.len(),
            QuantizedPayload::U8 { data, .. } => data.len(),
        }
    }
}

/// Head-level payload: quantized classification and regression maps plus
/// the sender's pose, grid spec, and validity bitmap.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMessage {
    pub sender_id: u32,
    pub frame_id: u32,
    pub sender_pose: Pose2D,
    pub grid: BEVGridSpec,
    pub anchors_per_cell: usize,
    pub cls: QuantizedPayload,
    pub reg: QuantizedPayload,
    pub validity: Vec<bool>,
}

impl HeadMessage {
    #[allow(clippy::too_many_arguments)]
    pub fn from_maps(
        sender_id: u32,
        frame_id: u32,
        sender_pose: Pose2D,
        grid: BEVGridSpec,
        cls: &ClassificationMap,
        reg: &RegressionMap,
        cls_spec: &QuantizationSpec,
        reg_spec: &QuantizationSpec,
    ) -> Result<Self> {
        grid.validate()?;
        let (h, w) = (grid.height(), grid.width());
        let cg = cls.as_grid();
        let rg = reg.as_grid();
        if cg.height() != h || cg.width() != w || rg.height() != h || rg.width() != w {
            return Err(CoreError::rejected("map dimensions do not match grid spec"));
        }
        let a = cls.anchors();
        if rg.channels() != REG_TARGETS * a {
            return Err(CoreError::rejected(
                "regression channels inconsistent with anchor count",
            ));
        }
        if cg.validity() != rg.validity() {
            return Err(CoreError::rejected(
                "classification and regression validity masks differ",
            ));
        }
        Ok(HeadMessage {
            sender_id,
            frame_id,
            sender_pose,
            grid,
            anchors_per_cell: a,
            cls: QuantizedPayload::encode(cg, cls_spec)?,
            reg: QuantizedPayload::encode(rg, reg_spec)?,
            validity: cg.validity().to_vec(),
        })
    }

    /// Reconstruct the head maps. Classification scores are clamped back
    /// into [0, 1] (uint8 reconstruction can overshoot by one step).
    pub fn to_maps(&self) -> Result<(ClassificationMap, RegressionMap)> {
        let (h, w) = (self.grid.height(), self.grid.width());
        let mut cls_grid = self.cls.decode(h, w, &self.validity)?;
        for v in cls_grid.values_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let reg_grid = self.reg.decode(h, w, &self.validity)?;
        Ok((
            ClassificationMap::from_grid(cls_grid)?,
            RegressionMap::from_grid(reg_grid)?,
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, TYPE_HEAD, self.sender_id, self.frame_id, &self.sender_pose);
        for v in [
            self.grid.x_min,
            self.grid.x_max,
            self.grid.y_min,
            self.grid.y_max,
            self.grid.cell,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.anchors_per_cell as u16).to_le_bytes());
        write_payload(&mut out, &self.cls);
        write_payload(&mut out, &self.reg);
        // validity bitmap, LSB-first
        let mut byte = 0u8;
        for (i, v) in self.validity.iter().enumerate() {
            if *v {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                out.push(byte);
                byte = 0;
            }
        }
        if !self.validity.len().is_multiple_of(8) {
            out.push(byte);
        }
        out
    }
}

/// Final-box payload for late fusion. Boxes are filtered to the sender
/// threshold at construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMessage {
    pub sender_id: u32,
    pub frame_id: u32,
    pub sender_pose: Pose2D,
    pub boxes: Vec<Box3D>,
}

impl BoxMessage {
    /// Keep only detections whose score clears `sender_threshold`.
    pub fn from_detections(
        sender_id: u32,
        frame_id: u32,
        sender_pose: Pose2D,
        detections: &[Box3D],
        sender_threshold: f64,
    ) -> Self {
        BoxMessage {
            sender_id,
            frame_id,
            sender_pose,
            boxes: detections
                .iter()
                .filter(|b| b.score >= sender_threshold)
                .copied()
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, TYPE_BOX, self.sender_id, self.frame_id, &self.sender_pose);
        out.extend_from_slice(&(self.boxes.len() as u32).to_le_bytes());
        for b in &self.boxes {
            for v in [b.x, b.y, b.z, b.length, b.width, b.height, b.yaw, b.score] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }
}

/// A parsed wire message.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Head(Box<HeadMessage>),
    Boxes(BoxMessage),
}

impl Message {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Message::Head(m) => m.to_bytes(),
            Message::Boxes(m) => m.to_bytes(),
        }
    }
}

fn write_header(out: &mut Vec<u8>, msg_type: u8, sender_id: u32, frame_id: u32, pose: &Pose2D) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(msg_type);
    out.extend_from_slice(&sender_id.to_le_bytes());
    out.extend_from_slice(&frame_id.to_le_bytes());
    for v in [pose.x, pose.y, pose.yaw] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_payload(out: &mut Vec<u8>, payload: &QuantizedPayload) {
    match payload {
        QuantizedPayload::F32 { channels, data } => {
            out.push(0);
            out.extend_from_slice(&(*channels as u16).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        QuantizedPayload::U8 {
            channels,
            scale,
            zero_point,
            data,
        } => {
            out.push(1);
            out.extend_from_slice(&(*channels as u16).to_le_bytes());
            for c in 0..*channels {
                out.extend_from_slice(&scale[c].to_le_bytes());
                out.push(zero_point[c]);
            }
            out.extend_from_slice(data);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> CoreError {
        CoreError::Parse {
            offset: self.pos,
            message: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!(
                "truncated: needed {n} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_payload(r: &mut Reader, cells: usize) -> Result<QuantizedPayload> {
    let mode = r.u8()?;
    let channels = r.u16()? as usize;
    match mode {
        0 => {
            let mut data = Vec::with_capacity(channels * cells);
            for _ in 0..channels * cells {
                data.push(r.f32()?);
            }
            Ok(QuantizedPayload::F32 { channels, data })
        }
        1 => {
            let mut scale = Vec::with_capacity(channels);
            let mut zero_point = Vec::with_capacity(channels);
            for _ in 0..channels {
                let s = r.f32()?;
                if s <= 0.0 {
                    return Err(r.err(format!("non-positive quantization scale {s}")));
                }
                scale.push(s);
                zero_point.push(r.u8()?);
            }
            let data = r.take(channels * cells)?.to_vec();
            Ok(QuantizedPayload::U8 {
                channels,
                scale,
                zero_point,
                data,
            })
        }
        other => Err(r.err(format!("unknown payload mode {other}"))),
    }
}

/// Parse a wire message, reporting the byte offset of any failure.
pub fn deserialize(bytes: &[u8]) -> Result<Message> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(CoreError::Parse {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(CoreError::Parse {
            offset: 8,
            message: format!("unsupported version {version}"),
        });
    }
    let msg_type = r.u8()?;
    let sender_id = r.u32()?;
    let frame_id = r.u32()?;
    let pose = Pose2D::new(r.f64()?, r.f64()?, r.f64()?);

    match msg_type {
        TYPE_BOX => {
            let count = r.u32()? as usize;
            let mut boxes = Vec::with_capacity(count);
            for _ in 0..count {
                let vals: [f32; 8] = {
                    let mut v = [0.0f32; 8];
                    for slot in &mut v {
                        *slot = r.f32()?;
                    }
                    v
                };
                boxes.push(Box3D {
                    x: f64::from(vals[0]),
                    y: f64::from(vals[1]),
                    z: f64::from(vals[2]),
                    length: f64::from(vals[3]),
                    width: f64::from(vals[4]),
                    height: f64::from(vals[5]),
                    yaw: f64::from(vals[6]),
                    score: f64::from(vals[7]),
                });
            }
            if r.pos != bytes.len() {
                return Err(r.err("trailing bytes"));
            }
            Ok(Message::Boxes(BoxMessage {
                sender_id,
                frame_id,
                sender_pose: pose,
                boxes,
            }))
        }
        TYPE_HEAD => {
            let x_min = r.f64()?;
            let x_max = r.f64()?;
            let y_min = r.f64()?;
            let y_max = r.f64()?;
            let cell = r.f64()?;
            let grid = BEVGridSpec::new(x_min, x_max, y_min, y_max, cell).map_err(|e| {
                CoreError::Parse {
                    offset: r.pos,
                    message: format!("invalid grid spec: {e}"),
                }
            })?;
            let cells = grid.cell_count();
            let anchors_per_cell = r.u16()? as usize;
            let cls = read_payload(&mut r, cells)?;
            let reg = read_payload(&mut r, cells)?;
            if cls.channels() != anchors_per_cell
                || reg.channels() != REG_TARGETS * anchors_per_cell
            {
                return Err(r.err("payload channel counts inconsistent with anchor count"));
            }
            if cls.values_len() != cls.channels() * cells
                || reg.values_len() != reg.channels() * cells
            {
                return Err(r.err("payload length inconsistent with grid"));
            }
            let bitmap = r.take(cells.div_ceil(8))?;
            let validity: Vec<bool> = (0..cells)
                .map(|i| bitmap[i / 8] & (1 << (i % 8)) != 0)
                .collect();
            if r.pos != bytes.len() {
                return Err(r.err("trailing bytes"));
            }
            Ok(Message::Head(Box::new(HeadMessage {
                sender_id,
                frame_id,
                sender_pose: pose,
                grid,
                anchors_per_cell,
                cls,
                reg,
                validity,
            })))
        }
        other => Err(CoreError::Parse {
            offset: 10,
            message: format!("unknown message type {other}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn test_grid() -> BEVGridSpec {
        BEVGridSpec::new(-4.0, 4.0, -2.0, 2.0, 0.5).unwrap()
    }

    fn random_maps(
        rng: &mut DetRng,
        grid: &BEVGridSpec,
        lo: f64,
        hi: f64,
    ) -> (ClassificationMap, RegressionMap) {
        let (h, w) = (grid.height(), grid.width());
        let validity: Vec<bool> = (0..h * w).map(|_| rng.next_f64() > 0.2).collect();
        let cls_vals = (0..2 * h * w).map(|_| rng.next_f64()).collect();
        let cls = ClassificationMap::from_grid(
            GridMap::from_values(2, h, w, cls_vals)
                .unwrap()
                .with_validity(validity.clone())
                .unwrap(),
        )
        .unwrap();
        let reg_vals = (0..14 * h * w).map(|_| rng.range_f64(lo, hi)).collect();
        let reg = RegressionMap::from_grid(
            GridMap::from_values(14, h, w, reg_vals)
                .unwrap()
                .with_validity(validity)
                .unwrap(),
        )
        .unwrap();
        (cls, reg)
    }

    #[test]
    fn empty_box_message_round_trips() {
        let msg = BoxMessage {
            sender_id: 3,
            frame_id: 11,
            sender_pose: Pose2D::new(1.0, -2.0, 0.5),
            boxes: vec![],
        };
        let bytes = msg.to_bytes();
        match deserialize(&bytes).unwrap() {
            Message::Boxes(back) => assert_eq!(back, msg),
            _ => panic!("wrong message type"),
        }
        // determinism
        assert_eq!(bytes, msg.to_bytes());
    }

    #[test]
    fn box_message_round_trips_f32_exact() {
        let mut rng = DetRng::new(61);
        let boxes: Vec<Box3D> = (0..5)
            .map(|_| Box3D {
                x: f64::from(rng.range_f64(-50.0, 50.0) as f32),
                y: f64::from(rng.range_f64(-50.0, 50.0) as f32),
                z: 0.0,
                length: 4.0,
                width: 2.0,
                height: 1.5,
                yaw: f64::from(rng.range_f64(-3.0, 3.0) as f32),
                score: f64::from(rng.next_f64() as f32),
            })
            .collect();
        let msg = BoxMessage {
            sender_id: 1,
            frame_id: 2,
            sender_pose: Pose2D::new(0.0, 0.0, 0.0),
            boxes,
        };
        match deserialize(&msg.to_bytes()).unwrap() {
            Message::Boxes(back) => assert_eq!(back, msg),
            _ => panic!("wrong message type"),
        }
    }

    #[test]
    fn box_message_filters_below_threshold() {
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let lo = Box3D::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0, 0.74).unwrap();
        let hi = Box3D::new(9.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0, 0.75).unwrap();
        let msg = BoxMessage::from_detections(0, 0, pose, &[lo, hi], 0.75);
        assert_eq!(msg.boxes, vec![hi]);
    }

    #[test]
    fn head_message_float32_round_trip_bit_exact() {
        let mut rng = DetRng::new(62);
        let grid = test_grid();
        let (cls, reg) = random_maps(&mut rng, &grid, -1.0, 1.0);
        let msg = HeadMessage::from_maps(
            7,
            3,
            Pose2D::new(2.0, 1.0, -0.3),
            grid,
            &cls,
            &reg,
            &QuantizationSpec::Float32,
            &QuantizationSpec::Float32,
        )
        .unwrap();
        let bytes = msg.to_bytes();
        let back = match deserialize(&bytes).unwrap() {
            Message::Head(m) => *m,
            _ => panic!("wrong message type"),
        };
        assert_eq!(back, msg);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn uint8_reconstruction_error_within_one_step() {
        let grid = test_grid();
        let (h, w) = (grid.height(), grid.width());
        let mut rng = DetRng::new(63);
        // values spanning [-1, 1] with the spec's example scale 2/255
        let reg_vals: Vec<f64> = (0..14 * h * w).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let reg = RegressionMap::from_grid(
            GridMap::from_values(14, h, w, reg_vals.clone()).unwrap(),
        )
        .unwrap();
        let cls = ClassificationMap::zeros(2, h, w);
        let spec = QuantizationSpec::Uint8Linear {
            scale: vec![2.0 / 255.0; 14],
            zero_point: vec![128; 14],
        };
        let msg = HeadMessage::from_maps(
            0,
            0,
            Pose2D::new(0.0, 0.0, 0.0),
            grid,
            &cls,
            &reg,
            &QuantizationSpec::Float32,
            &spec,
        )
        .unwrap();
        let (_, reg_back) = msg.to_maps().unwrap();
        let step = 2.0 / 255.0;
        for (a, b) in reg_vals.iter().zip(reg_back.as_grid().values()) {
            assert!((a - b).abs() <= step / 2.0 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn uint8_auto_spec_round_trip_bounded() {
        let mut rng = DetRng::new(64);
        let grid = test_grid();
        let (cls, reg) = random_maps(&mut rng, &grid, -3.0, 5.0);
        let cls_spec = QuantizationSpec::uint8_auto(cls.as_grid());
        let reg_spec = QuantizationSpec::uint8_auto(reg.as_grid());
        let msg = HeadMessage::from_maps(
            0,
            0,
            Pose2D::new(0.0, 0.0, 0.0),
            grid,
            &cls,
            &reg,
            &cls_spec,
            &reg_spec,
        )
        .unwrap();
        let round = deserialize(&msg.to_bytes()).unwrap();
        let back = match round {
            Message::Head(m) => *m,
            _ => panic!(),
        };
        let (cls_back, reg_back) = back.to_maps().unwrap();
        let QuantizationSpec::Uint8Linear { scale, .. } = &reg_spec else {
            panic!()
        };
        let hw = grid.cell_count();
        for c in 0..14 {
            for i in 0..hw {
                let a = reg.as_grid().values()[c * hw + i];
                let b = reg_back.as_grid().values()[c * hw + i];
                assert!((a - b).abs() <= f64::from(scale[c]) + 1e-9);
            }
        }
        for v in cls_back.as_grid().values() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let msg = BoxMessage {
            sender_id: 0,
            frame_id: 0,
            sender_pose: Pose2D::new(0.0, 0.0, 0.0),
            boxes: vec![],
        };
        let good = msg.to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[2] = b'!';
        match deserialize(&bad_magic) {
            Err(CoreError::Parse { offset: 0, .. }) => {}
            other => panic!("expected magic error, got {other:?}"),
        }

        let mut bad_version = good.clone();
        bad_version[8] = 99;
        match deserialize(&bad_version) {
            Err(CoreError::Parse { offset: 8, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }

        let mut truncated = good;
        truncated.truncate(truncated.len() - 2);
        match deserialize(&truncated) {
            Err(CoreError::Parse { offset, .. }) => assert!(offset > 8),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn constant_channel_quantizes_exactly() {
        let grid = BEVGridSpec::new(0.0, 2.0, 0.0, 2.0, 1.0).unwrap();
        for constant in [-2.5, 0.0, 3.75] {
            let vals = vec![constant; 7 * 4];
            let map = GridMap::from_values(7, 2, 2, vals).unwrap();
            let spec = QuantizationSpec::uint8_auto(&map);
            let reg = RegressionMap::from_grid(map).unwrap();
            let cls = ClassificationMap::zeros(1, 2, 2);
            let msg = HeadMessage::from_maps(
                0,
                0,
                Pose2D::new(0.0, 0.0, 0.0),
                grid,
                &cls,
                &reg,
                &QuantizationSpec::Float32,
                &spec,
            )
            .unwrap();
            let (_, back) = msg.to_maps().unwrap();
            for v in back.as_grid().values() {
                assert!(
                    (v - constant).abs() < 1e-6,
                    "constant {constant} came back as {v}"
                );
            }
        }
    }
}
