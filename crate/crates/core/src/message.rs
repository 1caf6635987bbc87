//! The decoded/encoded control message record shared by every stage.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::phy::{tbs_lookup, DciFields, DciFormat};

/// Lowest and highest usable C-RNTI.
pub const RNTI_MIN: u16 = 0x003D;
pub const RNTI_MAX: u16 = 0xFFF3;

pub fn is_usable_rnti(rnti: u16) -> bool {
    (RNTI_MIN..=RNTI_MAX).contains(&rnti)
}

/// One downlink control message with its placement in the control region.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DciMessage {
    pub sfn: u64,
    pub cell_id: u32,
    pub rnti: u16,
    pub format: DciFormat,
    pub mcs1: u8,
    pub mcs2: Option<u8>,
    pub nof_prb: u16,
    pub tbs: u32,
    pub ndi: bool,
    pub harq: u8,
    pub aggregation_level: u8,
    pub cce_start: u16,
}

impl DciMessage {
    pub fn fields(&self) -> DciFields {
        DciFields {
            mcs1: self.mcs1,
            mcs2: self.mcs2,
            nof_prb: self.nof_prb,
            ndi: self.ndi,
            harq: self.harq,
        }
    }

    /// Build a message from payload fields, deriving the transport block size.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fields(
        sfn: u64,
        cell_id: u32,
        rnti: u16,
        format: DciFormat,
        fields: DciFields,
        aggregation_level: u8,
        cce_start: u16,
    ) -> Result<Self> {
        let tbs = tbs_lookup(fields.mcs1, fields.mcs2, fields.nof_prb, format.streams())?;
        Ok(Self {
            sfn,
            cell_id,
            rnti,
            format,
            mcs1: fields.mcs1,
            mcs2: fields.mcs2,
            nof_prb: fields.nof_prb,
            tbs,
            ndi: fields.ndi,
            harq: fields.harq,
            aggregation_level,
            cce_start,
        })
    }

    pub fn cce_range(&self) -> std::ops::Range<usize> {
        let s = self.cce_start as usize;
        s..s + self.aggregation_level as usize
    }

    /// `ndi` is carried as an explicit new-data flag: false marks a HARQ
    /// retransmission.
    pub fn is_retx(&self) -> bool {
        !self.ndi
    }
}
