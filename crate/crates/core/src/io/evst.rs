//! Event streams: `"EVST"`, `u32` count, then 10 bytes per event
//! (`u16` x, `u16` y, `f32` t, `u8` channel, `i8` polarity), little-endian.

use std::path::Path;

use super::container::{read_file, write_file, Reader};
use crate::error::{Error, FormatError, Result};
use crate::eventsim::{Event, Polarity};

pub const EVENT_MAGIC: [u8; 4] = *b"EVST";
const RECORD: usize = 10;

pub fn encode_events(events: &[Event]) -> Result<Vec<u8>> {
    let count = u32::try_from(events.len()).map_err(|_| Error::pre("more than 2^32 events"))?;
    let mut out = Vec::with_capacity(8 + RECORD * events.len());
    out.extend_from_slice(&EVENT_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for e in events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.channel);
        out.extend_from_slice(&e.polarity.sign().to_le_bytes());
    }
    Ok(out)
}

pub fn decode_events(bytes: &[u8]) -> Result<Vec<Event>> {
    let mut r = Reader::new(bytes);
    r.magic(EVENT_MAGIC)?;
    let count = r.u32()? as usize;
    let expected = count * RECORD;
    if r.remaining() != expected {
        return Err(FormatError::Truncated {
            expected,
            actual: r.remaining(),
        }
        .into());
    }
    let bad = |detail: String| FormatError::Malformed { what: "event", detail };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let x = r.u16()?;
        let y = r.u16()?;
        let t = f32::from_le_bytes(r.array()?);
        let channel = r.u8()?;
        let p = r.u8()? as i8;
        if channel > 2 {
            return Err(bad(format!("#{i} has channel {channel}")).into());
        }
        let polarity = Polarity::from_sign(p).ok_or_else(|| bad(format!("#{i} has polarity {p}")))?;
        out.push(Event {
            x,
            y,
            t,
            channel,
            polarity,
        });
    }
    Ok(out)
}

pub fn write_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    write_file(path.as_ref(), &encode_events(events)?)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    decode_events(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let ev = vec![
            Event {
                x: 1,
                y: 2,
                t: 0.25,
                channel: 2,
                polarity: Polarity::Negative,
            },
            Event {
                x: 300,
                y: 0,
                t: 1.0,
                channel: 0,
                polarity: Polarity::Positive,
            },
        ];
        let b = encode_events(&ev).unwrap();
        assert_eq!(&b[..8], b"EVST\x02\0\0\0");
        assert_eq!(&b[8..18], &[1, 0, 2, 0, 0, 0, 0x80, 0x3e, 2, 0xff]);
        assert_eq!(decode_events(&b).unwrap(), ev);
        assert!(decode_events(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[17] = 0;
        assert!(decode_events(&bad).is_err());
    }
}
