use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header row of every metrics file.
pub const METRICS_HEADER: &str =
    "step,phase,lr,total_loss,mlm_loss,pos_loss,mlm_acc,pos_acc,tokens_seen,wall_seconds,seed";

/// One evaluation point of a pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub phase: u8,
    pub lr: f64,
    pub total_loss: f64,
    pub mlm_loss: f64,
    pub pos_loss: f64,
    #[serde(rename = "mlm_acc")]
    pub mlm_accuracy: f64,
    #[serde(rename = "pos_acc")]
    pub pos_accuracy: f64,
    pub tokens_seen: u64,
    pub wall_seconds: f64,
    pub seed: u64,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("metrics csv: {other:?}")),
    }
}

/// Streams records to a CSV sink, writing the header first and flushing
/// after each row so partial runs leave a readable file.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        inner.write_record(METRICS_HEADER.split(',')).map_err(csv_err)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        self.inner.serialize(record).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics<W: Write>(sink: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = MetricsWriter::new(sink)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

pub fn read_metrics<R: Read>(source: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(source);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Data(format!("unexpected metrics header {:?}", header.join(","))));
    }
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}
