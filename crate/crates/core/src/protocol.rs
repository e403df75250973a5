//! ASIP message model and its line codec.
//!
//! Every message travels as one ASCII line. Commands flow from the client to
//! the device, events (prefixed with `@`, or `!` for free text) flow back:
//!
//! ```text
//! I,p,<pin>,<mode>      set pin mode (1 input, 2 input-pullup, 3 output)
//! I,d,<pin>,<0|1>       digital write
//! I,A,<ms>              analog autoreport interval (0 disables)
//! R,A,<ms>              IR autoreport interval
//! B,A,<ms>              bump autoreport interval
//! E,A,<ms>              encoder autoreport interval
//! M,m,<left>,<right>    motor powers in [-255, 255]
//! E,r,<wheel>           reset encoder count
//!
//! @I,a,<n>,{i:v,...}    analog report
//! @I,d,<n>,{i:v,...}    digital report
//! @R,i,3,{0:v,1:v,2:v}  IR report
//! @B,b,2,{0:b,1:b}      bump report
//! @E,e,2,{0:c,1:c}      encoder counts
//! !<text>               free-text event
//! ```
//!
//! Lines whose service/tag pair is not registered decode to [`RawMessage`].

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Number of analog (and digital) pin slots a device exposes.
pub const MAX_NUM_ANALOG_PINS: usize = 16;
/// Number of IR sensors in the reflectance array.
pub const NUM_IR_SENSORS: usize = 3;
/// Largest motor power magnitude.
pub const MAX_MOTOR_POWER: i32 = 255;
/// Largest autoreport interval.
pub const MAX_INTERVAL_MS: u32 = 65_535;

/// Registered ASIP services.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServiceId {
    Io,
    Motor,
    Encoder,
    Ir,
    Bump,
}

impl ServiceId {
    pub const ALL: [ServiceId; 5] = [
        ServiceId::Io,
        ServiceId::Motor,
        ServiceId::Encoder,
        ServiceId::Ir,
        ServiceId::Bump,
    ];

    pub fn code(self) -> char {
        match self {
            ServiceId::Io => 'I',
            ServiceId::Motor => 'M',
            ServiceId::Encoder => 'E',
            ServiceId::Ir => 'R',
            ServiceId::Bump => 'B',
        }
    }

    pub fn from_code(code: char) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PinMode {
    Input = 1,
    InputPullup = 2,
    Output = 3,
}

impl PinMode {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(PinMode::Input),
            2 => Some(PinMode::InputPullup),
            3 => Some(PinMode::Output),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Index→value pairs carried by report events.
///
/// Indices are unique and iterate in ascending order, which is also the order
/// the encoder writes them in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ReportMap(BTreeMap<u16, i32>);

impl ReportMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a map from pairs, rejecting a repeated index.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, u16>
    where
        I: IntoIterator<Item = (u16, i32)>,
    {
        let mut map = BTreeMap::new();
        for (index, value) in pairs {
            if map.insert(index, value).is_some() {
                return Err(index);
            }
        }
        Ok(Self(map))
    }

    /// Inserts or replaces the value at `index`.
    pub fn insert(&mut self, index: u16, value: i32) -> Option<i32> {
        self.0.insert(index, value)
    }

    pub fn get(&self, index: u16) -> Option<i32> {
        self.0.get(&index).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, i32)> + '_ {
        self.0.iter().map(|(&i, &v)| (i, v))
    }
}

impl FromIterator<(u16, i32)> for ReportMap {
    fn from_iter<T: IntoIterator<Item = (u16, i32)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// A well-formed line whose service/tag pair this codec does not know.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawMessage(String);

impl RawMessage {
    /// Wraps `line` if it decodes as an unknown message.
    pub fn new(line: impl Into<String>) -> Option<Self> {
        let line = line.into();
        match decode(&line) {
            Ok(AsipMessage::Raw(raw)) if raw.0 == line => Some(raw),
            _ => None,
        }
    }

    pub fn line(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AsipMessage {
    SetPinMode { pin: u8, mode: PinMode },
    DigitalWrite { pin: u8, level: u8 },
    AnalogAutoreport { interval_ms: u32 },
    IrAutoreport { interval_ms: u32 },
    BumpAutoreport { interval_ms: u32 },
    EncoderAutoreport { interval_ms: u32 },
    SetMotors { left: i32, right: i32 },
    ResetEncoder { wheel: u8 },
    AnalogReport(ReportMap),
    DigitalReport(ReportMap),
    IrReport(ReportMap),
    BumpReport(ReportMap),
    EncoderReport(ReportMap),
    Info(String),
    Raw(RawMessage),
}

impl AsipMessage {
    /// True for device→client events.
    pub fn is_event(&self) -> bool {
        matches!(
            self,
            AsipMessage::AnalogReport(_)
                | AsipMessage::DigitalReport(_)
                | AsipMessage::IrReport(_)
                | AsipMessage::BumpReport(_)
                | AsipMessage::EncoderReport(_)
                | AsipMessage::Info(_)
        )
    }

    /// Checks every field against its declared range.
    pub fn validate(&self) -> Result<(), EncodeError> {
        use AsipMessage::*;
        match self {
            SetPinMode { pin, .. } => check_pin(*pin),
            DigitalWrite { pin, level } => {
                check_pin(*pin)?;
                check("level", i64::from(*level), 0, 1)
            }
            AnalogAutoreport { interval_ms }
            | IrAutoreport { interval_ms }
            | BumpAutoreport { interval_ms }
            | EncoderAutoreport { interval_ms } => {
                check("interval_ms", i64::from(*interval_ms), 0, i64::from(MAX_INTERVAL_MS))
            }
            SetMotors { left, right } => {
                check_power("left", *left)?;
                check_power("right", *right)
            }
            ResetEncoder { wheel } => check("wheel", i64::from(*wheel), 0, 1),
            AnalogReport(map) => check_map(map, MAX_NUM_ANALOG_PINS, 0, 1023),
            DigitalReport(map) => check_map(map, MAX_NUM_ANALOG_PINS, 0, 1),
            IrReport(map) => check_map(map, NUM_IR_SENSORS, 0, 100),
            BumpReport(map) => check_map(map, 2, 0, 1),
            EncoderReport(map) => check_map(map, 2, i64::from(i32::MIN), i64::from(i32::MAX)),
            Info(text) => {
                if text.bytes().all(|b| b.is_ascii() && !b.is_ascii_control()) {
                    Ok(())
                } else {
                    Err(EncodeError::InvalidText)
                }
            }
            Raw(_) => Ok(()),
        }
    }
}

fn check(field: &'static str, value: i64, lo: i64, hi: i64) -> Result<(), EncodeError> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(EncodeError::OutOfRange { field, value })
    }
}

fn check_pin(pin: u8) -> Result<(), EncodeError> {
    check("pin", i64::from(pin), 0, MAX_NUM_ANALOG_PINS as i64 - 1)
}

fn check_power(field: &'static str, power: i32) -> Result<(), EncodeError> {
    let max = i64::from(MAX_MOTOR_POWER);
    check(field, i64::from(power), -max, max)
}

fn check_map(map: &ReportMap, slots: usize, lo: i64, hi: i64) -> Result<(), EncodeError> {
    for (index, value) in map.iter() {
        check("index", i64::from(index), 0, slots as i64 - 1)?;
        check("value", i64::from(value), lo, hi)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("free text must be printable ASCII")]
    InvalidText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    NonAscii,
    ControlCharacter,
    ExpectedNumber,
    NumberOutOfRange,
    UnknownPinMode,
    MissingField,
    TrailingData,
    MalformedBraces,
    DuplicateIndex,
    CountMismatch,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            ParseErrorKind::Empty => "empty line",
            ParseErrorKind::NonAscii => "non-ASCII byte",
            ParseErrorKind::ControlCharacter => "control character",
            ParseErrorKind::ExpectedNumber => "expected a decimal number",
            ParseErrorKind::NumberOutOfRange => "number does not fit the field",
            ParseErrorKind::UnknownPinMode => "unknown pin mode",
            ParseErrorKind::MissingField => "missing field",
            ParseErrorKind::TrailingData => "unexpected trailing data",
            ParseErrorKind::MalformedBraces => "malformed brace section",
            ParseErrorKind::DuplicateIndex => "duplicate index",
            ParseErrorKind::CountMismatch => "declared count does not match entries",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    fn at(offset: usize, kind: ParseErrorKind) -> Self {
        Self { offset, kind }
    }
}

/// Renders `msg` as one line, without the terminator.
pub fn encode(msg: &AsipMessage) -> Result<String, EncodeError> {
    use AsipMessage::*;
    msg.validate()?;
    let line = match msg {
        SetPinMode { pin, mode } => format!("I,p,{},{}", pin, mode.code()),
        DigitalWrite { pin, level } => format!("I,d,{pin},{level}"),
        AnalogAutoreport { interval_ms } => format!("I,A,{interval_ms}"),
        IrAutoreport { interval_ms } => format!("R,A,{interval_ms}"),
        BumpAutoreport { interval_ms } => format!("B,A,{interval_ms}"),
        EncoderAutoreport { interval_ms } => format!("E,A,{interval_ms}"),
        SetMotors { left, right } => format!("M,m,{left},{right}"),
        ResetEncoder { wheel } => format!("E,r,{wheel}"),
        AnalogReport(map) => encode_report("@I,a", map),
        DigitalReport(map) => encode_report("@I,d", map),
        IrReport(map) => encode_report("@R,i", map),
        BumpReport(map) => encode_report("@B,b", map),
        EncoderReport(map) => encode_report("@E,e", map),
        Info(text) => format!("!{text}"),
        Raw(raw) => raw.0.clone(),
    };
    Ok(line)
}

fn encode_report(head: &str, map: &ReportMap) -> String {
    let body = map
        .iter()
        .map(|(i, v)| format!("{i}:{v}"))
        .collect::<Vec<_>>()
        .join(",");
    format!("{head},{},{{{body}}}", map.len())
}

#[derive(Clone, Copy)]
enum Kind {
    PinMode,
    DigitalWrite,
    AnalogAuto,
    IrAuto,
    BumpAuto,
    EncoderAuto,
    Motors,
    ResetEncoder,
    AnalogReport,
    DigitalReport,
    IrReport,
    BumpReport,
    EncoderReport,
}

fn lookup(head: &str, tag: &str) -> Option<Kind> {
    Some(match (head, tag) {
        ("I", "p") => Kind::PinMode,
        ("I", "d") => Kind::DigitalWrite,
        ("I", "A") => Kind::AnalogAuto,
        ("R", "A") => Kind::IrAuto,
        ("B", "A") => Kind::BumpAuto,
        ("E", "A") => Kind::EncoderAuto,
        ("M", "m") => Kind::Motors,
        ("E", "r") => Kind::ResetEncoder,
        ("@I", "a") => Kind::AnalogReport,
        ("@I", "d") => Kind::DigitalReport,
        ("@R", "i") => Kind::IrReport,
        ("@B", "b") => Kind::BumpReport,
        ("@E", "e") => Kind::EncoderReport,
        _ => return None,
    })
}

/// Parses one line (without its `\n`; a trailing `\r` is tolerated).
pub fn decode(line: &str) -> Result<AsipMessage, ParseError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.is_empty() {
        return Err(ParseError::at(0, ParseErrorKind::Empty));
    }
    for (offset, byte) in line.bytes().enumerate() {
        if !byte.is_ascii() {
            return Err(ParseError::at(offset, ParseErrorKind::NonAscii));
        }
        if byte.is_ascii_control() {
            return Err(ParseError::at(offset, ParseErrorKind::ControlCharacter));
        }
    }
    if let Some(text) = line.strip_prefix('!') {
        return Ok(AsipMessage::Info(text.to_owned()));
    }

    let mut cur = Cursor::new(line);
    let (_, head) = cur.field();
    let tag = if cur.eat(b',') { Some(cur.field().1) } else { None };
    let kind = match tag.and_then(|tag| lookup(head, tag)) {
        Some(kind) => kind,
        None => return Ok(AsipMessage::Raw(RawMessage(line.to_owned()))),
    };

    let msg = match kind {
        Kind::PinMode => {
            let pin = cur.next_int::<u8>()?;
            let (offset, mode) = cur.next_int_at::<i64>()?;
            let mode = PinMode::from_code(mode).ok_or(ParseError::at(offset, ParseErrorKind::UnknownPinMode))?;
            AsipMessage::SetPinMode { pin, mode }
        }
        Kind::DigitalWrite => AsipMessage::DigitalWrite {
            pin: cur.next_int()?,
            level: cur.next_int()?,
        },
        Kind::AnalogAuto => AsipMessage::AnalogAutoreport {
            interval_ms: cur.next_int()?,
        },
        Kind::IrAuto => AsipMessage::IrAutoreport {
            interval_ms: cur.next_int()?,
        },
        Kind::BumpAuto => AsipMessage::BumpAutoreport {
            interval_ms: cur.next_int()?,
        },
        Kind::EncoderAuto => AsipMessage::EncoderAutoreport {
            interval_ms: cur.next_int()?,
        },
        Kind::Motors => AsipMessage::SetMotors {
            left: cur.next_int()?,
            right: cur.next_int()?,
        },
        Kind::ResetEncoder => AsipMessage::ResetEncoder { wheel: cur.next_int()? },
        Kind::AnalogReport => AsipMessage::AnalogReport(cur.report()?),
        Kind::DigitalReport => AsipMessage::DigitalReport(cur.report()?),
        Kind::IrReport => AsipMessage::IrReport(cur.report()?),
        Kind::BumpReport => AsipMessage::BumpReport(cur.report()?),
        Kind::EncoderReport => AsipMessage::EncoderReport(cur.report()?),
    };
    cur.finish()?;
    Ok(msg)
}

struct Cursor<'a> {
    line: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(line: &'a str) -> Self {
        Self { line, pos: 0 }
    }

    fn peek(&self) -> Option<u8> {
        self.line.as_bytes().get(self.pos).copied()
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, byte: u8, kind: ParseErrorKind) -> Result<(), ParseError> {
        if self.eat(byte) {
            Ok(())
        } else {
            Err(ParseError::at(self.pos, kind))
        }
    }

    /// Consumes bytes up to (not including) the next byte in `stops`.
    fn take_until(&mut self, stops: &[u8]) -> (usize, &'a str) {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if stops.contains(&b) {
                break;
            }
            self.pos += 1;
        }
        (start, &self.line[start..self.pos])
    }

    fn field(&mut self) -> (usize, &'a str) {
        self.take_until(b",")
    }

    fn number<T: TryFrom<i64>>(offset: usize, text: &str) -> Result<T, ParseError> {
        let digits = text.strip_prefix('-').unwrap_or(text);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::at(offset, ParseErrorKind::ExpectedNumber));
        }
        let wide: i64 = text
            .parse()
            .map_err(|_| ParseError::at(offset, ParseErrorKind::NumberOutOfRange))?;
        T::try_from(wide).map_err(|_| ParseError::at(offset, ParseErrorKind::NumberOutOfRange))
    }

    fn next_int_at<T: TryFrom<i64>>(&mut self) -> Result<(usize, T), ParseError> {
        self.expect(b',', ParseErrorKind::MissingField)?;
        let (offset, text) = self.field();
        Ok((offset, Self::number(offset, text)?))
    }

    fn next_int<T: TryFrom<i64>>(&mut self) -> Result<T, ParseError> {
        self.next_int_at().map(|(_, v)| v)
    }

    fn report(&mut self) -> Result<ReportMap, ParseError> {
        let (count_offset, count) = self.next_int_at::<u32>()?;
        self.expect(b',', ParseErrorKind::MissingField)?;
        self.expect(b'{', ParseErrorKind::MalformedBraces)?;
        let mut map = ReportMap::new();
        if !self.eat(b'}') {
            loop {
                let (offset, index) = self.take_until(b":,}");
                let index: u16 = Self::number(offset, index)?;
                self.expect(b':', ParseErrorKind::MalformedBraces)?;
                let (value_offset, value) = self.take_until(b",}");
                let value: i32 = Self::number(value_offset, value)?;
                if map.insert(index, value).is_some() {
                    return Err(ParseError::at(offset, ParseErrorKind::DuplicateIndex));
                }
                if self.eat(b'}') {
                    break;
                }
                self.expect(b',', ParseErrorKind::MalformedBraces)?;
            }
        }
        if map.len() != count as usize {
            return Err(ParseError::at(count_offset, ParseErrorKind::CountMismatch));
        }
        Ok(map)
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos == self.line.len() {
            Ok(())
        } else {
            Err(ParseError::at(self.pos, ParseErrorKind::TrailingData))
        }
    }
}

/// Position (in characters) of the first occurrence of `needle`'s first
/// character, or `None` when absent or when `needle` is empty.
pub fn index_of_first(haystack: &str, needle: &str) -> Option<usize> {
    let target = needle.chars().next()?;
    haystack.chars().position(|c| c == target)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("input has no `{{` ... `}}` section")]
pub struct MissingBraces;

/// Text strictly between the first `{` and the first `}`.
pub fn substring_between_braces(input: &str) -> Result<String, MissingBraces> {
    let open = index_of_first(input, "{").ok_or(MissingBraces)?;
    let close = index_of_first(input, "}").ok_or(MissingBraces)?;
    if close < open {
        return Err(MissingBraces);
    }
    Ok(input.chars().skip(open + 1).take(close - open - 1).collect())
}

/// Wire format of the simulator clock extension.
///
/// A simulated device advances only when told to: the client sends
/// `T,s,<steps>` and the device answers, after stepping and emitting every
/// report that fell due, with `!sim:<step>,<x>,<y>,<theta>`. Both lines are
/// outside the registered grammar, so they travel as [`RawMessage`] and
/// [`AsipMessage::Info`] respectively and ordinary devices ignore them.
pub mod lockstep {
    use super::{AsipMessage, RawMessage};

    const ADVANCE_PREFIX: &str = "T,s,";
    const ACK_PREFIX: &str = "sim:";

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Ack {
        pub step: u64,
        pub x: f64,
        pub y: f64,
        pub theta: f64,
    }

    pub fn advance(steps: u64) -> AsipMessage {
        AsipMessage::Raw(RawMessage(format!("{ADVANCE_PREFIX}{steps}")))
    }

    pub fn parse_advance(raw: &RawMessage) -> Option<u64> {
        raw.line().strip_prefix(ADVANCE_PREFIX)?.parse().ok()
    }

    pub fn ack(ack: &Ack) -> AsipMessage {
        AsipMessage::Info(format!("{ACK_PREFIX}{},{},{},{}", ack.step, ack.x, ack.y, ack.theta))
    }

    pub fn parse_ack(text: &str) -> Option<Ack> {
        let mut parts = text.strip_prefix(ACK_PREFIX)?.split(',');
        let ack = Ack {
            step: parts.next()?.parse().ok()?,
            x: parts.next()?.parse().ok()?,
            y: parts.next()?.parse().ok()?,
            theta: parts.next()?.parse().ok()?,
        };
        parts.next().is_none().then_some(ack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn analog(pairs: &[(u16, i32)]) -> AsipMessage {
        AsipMessage::AnalogReport(ReportMap::from_pairs(pairs.iter().copied()).unwrap())
    }

    #[test]
    fn encodes_analog_report() {
        let msg = analog(&[(0, 320), (1, 340), (2, 329)]);
        assert_eq!(encode(&msg).unwrap(), "@I,a,3,{0:320,1:340,2:329}");
    }

    #[test]
    fn encodes_commands() {
        let dw = AsipMessage::DigitalWrite { pin: 11, level: 1 };
        assert_eq!(encode(&dw).unwrap(), "I,d,11,1");
        let m = AsipMessage::SetMotors { left: -115, right: 115 };
        assert_eq!(encode(&m).unwrap(), "M,m,-115,115");
        assert_eq!(decode("M,m,-115,115").unwrap(), m);
    }

    #[test]
    fn encode_rejects_out_of_range_fields() {
        let err = encode(&AsipMessage::SetMotors { left: 0, right: 256 }).unwrap_err();
        assert_eq!(
            err,
            EncodeError::OutOfRange {
                field: "right",
                value: 256
            }
        );
        let err = encode(&AsipMessage::DigitalWrite { pin: 16, level: 0 }).unwrap_err();
        assert!(matches!(err, EncodeError::OutOfRange { field: "pin", .. }));
        let err = encode(&analog(&[(0, 1024)])).unwrap_err();
        assert!(matches!(err, EncodeError::OutOfRange { field: "value", .. }));
        let err = encode(&AsipMessage::IrAutoreport { interval_ms: 70_000 }).unwrap_err();
        assert!(matches!(
            err,
            EncodeError::OutOfRange {
                field: "interval_ms",
                ..
            }
        ));
    }

    #[test]
    fn decodes_analog_reports() {
        assert_eq!(
            decode("@I,a,3,{0:320,1:340,2:329}").unwrap(),
            analog(&[(0, 320), (1, 340), (2, 329)])
        );
        assert_eq!(decode("@I,a,0,{}").unwrap(), analog(&[]));
        let err = decode("@I,a,2,{0:320}").unwrap_err();
        assert_eq!(err, ParseError::at(5, ParseErrorKind::CountMismatch));
    }

    #[test]
    fn decode_reports_offsets() {
        assert_eq!(
            decode("M,m,x").unwrap_err(),
            ParseError::at(4, ParseErrorKind::ExpectedNumber)
        );
        assert_eq!(
            decode("M,m,1").unwrap_err(),
            ParseError::at(5, ParseErrorKind::MissingField)
        );
        assert_eq!(
            decode("M,m,1,2,3").unwrap_err(),
            ParseError::at(7, ParseErrorKind::TrailingData)
        );
        assert_eq!(
            decode("@B,b,2,{0:1,0:0}").unwrap_err(),
            ParseError::at(12, ParseErrorKind::DuplicateIndex)
        );
        assert_eq!(
            decode("@B,b,2,{0:1,1:0").unwrap_err(),
            ParseError::at(15, ParseErrorKind::MalformedBraces)
        );
        assert_eq!(
            decode("I,p,3,7").unwrap_err(),
            ParseError::at(6, ParseErrorKind::UnknownPinMode)
        );
        assert_eq!(decode("").unwrap_err().kind, ParseErrorKind::Empty);
        assert_eq!(decode("I,d,300,1").unwrap_err().kind, ParseErrorKind::NumberOutOfRange);
    }

    #[test]
    fn strips_carriage_return() {
        assert_eq!(
            decode("R,A,100\r").unwrap(),
            AsipMessage::IrAutoreport { interval_ms: 100 }
        );
    }

    #[test]
    fn unknown_lines_are_raw_and_text_is_info() {
        assert_eq!(decode("X,q,1").unwrap(), AsipMessage::Raw(RawMessage("X,q,1".into())));
        assert_eq!(
            decode("!hello, world").unwrap(),
            AsipMessage::Info("hello, world".into())
        );
        assert!(RawMessage::new("I,d,1,1").is_none());
        assert!(RawMessage::new("Z,z").is_some());
    }

    #[test]
    fn decode_is_lenient_on_report_values() {
        let msg = decode("@R,i,3,{0:150,1:-3,2:20}").unwrap();
        assert!(msg.validate().is_err());
        assert_eq!(
            msg,
            AsipMessage::IrReport([(0, 150), (1, -3), (2, 20)].into_iter().collect())
        );
    }

    #[test]
    fn brace_helpers() {
        assert_eq!(
            substring_between_braces("@I,a,3,{0:320,1:340,2:329}").unwrap(),
            "0:320,1:340,2:329"
        );
        assert_eq!(substring_between_braces("{}").unwrap(), "");
        assert_eq!(substring_between_braces("x{a}{b}").unwrap(), "a");
        assert_eq!(substring_between_braces("abc"), Err(MissingBraces));
        assert_eq!(substring_between_braces("}{"), Err(MissingBraces));
        assert_eq!(index_of_first("0:320", ":"), Some(1));
        assert_eq!(index_of_first("abc", "a"), Some(0));
        assert_eq!(index_of_first("abc", "z"), None);
        assert_eq!(index_of_first("abc", "cz"), Some(2));
        assert_eq!(index_of_first("abc", ""), None);
    }

    #[test]
    fn lockstep_lines_round_trip() {
        let line = encode(&lockstep::advance(7)).unwrap();
        assert_eq!(line, "T,s,7");
        match decode(&line).unwrap() {
            AsipMessage::Raw(raw) => assert_eq!(lockstep::parse_advance(&raw), Some(7)),
            other => panic!("unexpected {other:?}"),
        }
        let ack = lockstep::Ack {
            step: 12,
            x: 0.1,
            y: -2.5e-7,
            theta: 3.0,
        };
        match decode(&encode(&lockstep::ack(&ack)).unwrap()).unwrap() {
            AsipMessage::Info(text) => assert_eq!(lockstep::parse_ack(&text), Some(ack)),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn report_map(slots: u16, lo: i32, hi: i32) -> impl Strategy<Value = ReportMap> {
        proptest::collection::btree_map(0..slots, lo..=hi, 0..=slots as usize).prop_map(|m| m.into_iter().collect())
    }

    pub(crate) fn any_message() -> impl Strategy<Value = AsipMessage> {
        let mode = prop_oneof![Just(PinMode::Input), Just(PinMode::InputPullup), Just(PinMode::Output)];
        let text = "[ -~]{0,24}";
        prop_oneof![
            (0u8..16, mode).prop_map(|(pin, mode)| AsipMessage::SetPinMode { pin, mode }),
            (0u8..16, 0u8..=1).prop_map(|(pin, level)| AsipMessage::DigitalWrite { pin, level }),
            (0u32..=MAX_INTERVAL_MS).prop_map(|interval_ms| AsipMessage::AnalogAutoreport { interval_ms }),
            (0u32..=MAX_INTERVAL_MS).prop_map(|interval_ms| AsipMessage::IrAutoreport { interval_ms }),
            (0u32..=MAX_INTERVAL_MS).prop_map(|interval_ms| AsipMessage::BumpAutoreport { interval_ms }),
            (0u32..=MAX_INTERVAL_MS).prop_map(|interval_ms| AsipMessage::EncoderAutoreport { interval_ms }),
            (-255i32..=255, -255i32..=255).prop_map(|(left, right)| AsipMessage::SetMotors { left, right }),
            (0u8..=1).prop_map(|wheel| AsipMessage::ResetEncoder { wheel }),
            report_map(16, 0, 1023).prop_map(AsipMessage::AnalogReport),
            report_map(16, 0, 1).prop_map(AsipMessage::DigitalReport),
            report_map(3, 0, 100).prop_map(AsipMessage::IrReport),
            report_map(2, 0, 1).prop_map(AsipMessage::BumpReport),
            report_map(2, i32::MIN, i32::MAX).prop_map(AsipMessage::EncoderReport),
            text.prop_map(AsipMessage::Info),
        ]
    }

    proptest! {
        #[test]
        fn round_trips(msg in any_message()) {
            let line = encode(&msg).unwrap();
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(decode(&line).unwrap(), msg);
        }

        #[test]
        fn decode_never_panics(line in "[\\x00-\\x7f]{0,40}") {
            let _ = decode(&line);
        }

        #[test]
        fn decode_never_panics_on_near_misses(
            head in prop_oneof![Just("@I,a,"), Just("M,m,"), Just("@E,e,"), Just("I,p,")],
            tail in "[-0-9,:{}a]{0,20}",
        ) {
            if let Ok(msg) = decode(&format!("{head}{tail}")) {
                if msg.validate().is_ok() {
                    prop_assert_eq!(decode(&encode(&msg).unwrap()).unwrap(), msg);
                }
            }
        }
    }
}
