//! Protocol wire messages.
//!
//! Every message starts with the wire version byte and a kind tag;
//! payloads use the canonical codec. Nodes ignore anything that fails to
//! decode.

use crate::codec::{decode_option, encode_option, CodecError, Decode, Encode, Reader, WIRE_VERSION};
use crate::consensus::ConsensusMsg;
use crate::ledger::{CommittedBlock, Transaction};
use crate::types::FileId;
use crate::wts::{AggregateSignature, PartialSignature};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMsg {
    /// Consensus proposal or vote.
    Consensus(ConsensusMsg),
    /// Transaction gossip (client or miner submission).
    Tx(Transaction),
    /// Committed block with its certificate, for replicas that missed it.
    BlockSync(Box<CommittedBlock>),
    /// Client hands the raw file to the encoding miner.
    FileUpload { file_id: FileId, data: Vec<u8> },
    /// Encoding miner delivers chunk `index` to the host of sector
    /// `placement[index - 1]`.
    Chunk {
        file_id: FileId,
        index: u16,
        payload: Vec<u8>,
    },
    /// Storage miner's signature share over one chunk fingerprint, sent
    /// to the chunk's host.
    Partial {
        file_id: FileId,
        index: u16,
        partial: PartialSignature,
    },
    /// Host confirms a verified chunk hit its sector.
    StoredAck { file_id: FileId, index: u16 },
    /// Host rejected a chunk (fingerprint mismatch against the certified
    /// aggregate); signals the client to retry with another encoder.
    PutNack { file_id: FileId, index: u16 },
    /// Client asks a retrieval miner for a file.
    GetRequest { file_id: FileId },
    /// Retrieval miner fans the request out to storage hosts.
    GetBroadcast { file_id: FileId },
    /// Storage host returns a chunk with its aggregate signature.
    ChunkResponse {
        file_id: FileId,
        index: u16,
        payload: Vec<u8>,
        aggregate: AggregateSignature,
    },
    /// Retrieval miner's answer to the client.
    GetResponse {
        file_id: FileId,
        data: Option<Vec<u8>>,
    },
}

impl Encode for WireMsg {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(WIRE_VERSION);
        match self {
            WireMsg::Consensus(m) => {
                out.push(0);
                m.encode(out);
            }
            WireMsg::Tx(tx) => {
                out.push(1);
                tx.encode(out);
            }
            WireMsg::BlockSync(b) => {
                out.push(2);
                b.encode(out);
            }
            WireMsg::FileUpload { file_id, data } => {
                out.push(3);
                file_id.encode(out);
                data.encode(out);
            }
            WireMsg::Chunk {
                file_id,
                index,
                payload,
            } => {
                out.push(4);
                file_id.encode(out);
                index.encode(out);
                payload.encode(out);
            }
            WireMsg::Partial {
                file_id,
                index,
                partial,
            } => {
                out.push(5);
                file_id.encode(out);
                index.encode(out);
                partial.encode(out);
            }
            WireMsg::StoredAck { file_id, index } => {
                out.push(6);
                file_id.encode(out);
                index.encode(out);
            }
            WireMsg::PutNack { file_id, index } => {
                out.push(7);
                file_id.encode(out);
                index.encode(out);
            }
            WireMsg::GetRequest { file_id } => {
                out.push(8);
                file_id.encode(out);
            }
            WireMsg::GetBroadcast { file_id } => {
                out.push(9);
                file_id.encode(out);
            }
            WireMsg::ChunkResponse {
                file_id,
                index,
                payload,
                aggregate,
            } => {
                out.push(10);
                file_id.encode(out);
                index.encode(out);
                payload.encode(out);
                aggregate.encode(out);
            }
            WireMsg::GetResponse { file_id, data } => {
                out.push(11);
                file_id.encode(out);
                encode_option(data, out);
            }
        }
    }
}

impl Decode for WireMsg {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.version()?;
        match r.u8()? {
            0 => Ok(WireMsg::Consensus(ConsensusMsg::decode(r)?)),
            1 => Ok(WireMsg::Tx(Transaction::decode(r)?)),
            2 => Ok(WireMsg::BlockSync(Box::new(CommittedBlock::decode(r)?))),
            3 => Ok(WireMsg::FileUpload {
                file_id: FileId::decode(r)?,
                data: Vec::<u8>::decode(r)?,
            }),
            4 => Ok(WireMsg::Chunk {
                file_id: FileId::decode(r)?,
                index: r.u16()?,
                payload: Vec::<u8>::decode(r)?,
            }),
            5 => Ok(WireMsg::Partial {
                file_id: FileId::decode(r)?,
                index: r.u16()?,
                partial: PartialSignature::decode(r)?,
            }),
            6 => Ok(WireMsg::StoredAck {
                file_id: FileId::decode(r)?,
                index: r.u16()?,
            }),
            7 => Ok(WireMsg::PutNack {
                file_id: FileId::decode(r)?,
                index: r.u16()?,
            }),
            8 => Ok(WireMsg::GetRequest {
                file_id: FileId::decode(r)?,
            }),
            9 => Ok(WireMsg::GetBroadcast {
                file_id: FileId::decode(r)?,
            }),
            10 => Ok(WireMsg::ChunkResponse {
                file_id: FileId::decode(r)?,
                index: r.u16()?,
                payload: Vec::<u8>::decode(r)?,
                aggregate: AggregateSignature::decode(r)?,
            }),
            11 => Ok(WireMsg::GetResponse {
                file_id: FileId::decode(r)?,
                data: decode_option(r)?,
            }),
            tag => Err(CodecError::Tag {
                what: "wire msg",
                tag,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::sha256;

    #[test]
    fn roundtrip_and_version_guard() {
        let msg = WireMsg::GetRequest {
            file_id: FileId(sha256(b"f")),
        };
        let bytes = msg.encode_to_vec();
        assert_eq!(WireMsg::decode_all(&bytes).unwrap(), msg);

        let mut wrong = bytes.clone();
        wrong[0] = 99;
        assert!(matches!(
            WireMsg::decode_all(&wrong),
            Err(CodecError::Version(99))
        ));
    }

    #[test]
    fn garbage_rejected_not_panicking() {
        for len in 0..64 {
            let garbage: Vec<u8> = (0..len).map(|i| (i * 37) as u8).collect();
            let _ = WireMsg::decode_all(&garbage); // must not panic
        }
    }
}
