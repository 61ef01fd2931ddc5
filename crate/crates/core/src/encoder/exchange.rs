//! Directory-based exchange with an external encoder process.
//!
//! One round:
//!
//! 1. the client writes `<id>.pctf` for every item into the request
//!    directory, then `request.json` (`{"items": [{"id", "kind"}]}`, written
//!    to a temporary name and renamed into place);
//! 2. the server answers with `<id>.pctf` in the response directory
//!    (`[N, D]` for `image` items, `[D]` for `crop` items), optionally
//!    `<id>.err` for items it could not process, and finally `done.marker`;
//! 3. the client reads the responses and removes the request files, the
//!    responses and the marker so the next round starts clean.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EncodeJob, EncodedJob, Encoder, EncoderOutput, ItemKey};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const REQUEST_FILE: &str = "request.json";
pub const DONE_MARKER: &str = "done.marker";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Image,
    Crop,
}

#[derive(Debug, Clone)]
pub struct ExchangeItem {
    pub id: String,
    pub kind: ItemKind,
    pub tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct RequestEntry {
    id: String,
    kind: ItemKind,
}

#[derive(Serialize, Deserialize)]
struct Request {
    items: Vec<RequestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExchangeConfig {
    pub request_dir: PathBuf,
    pub response_dir: PathBuf,
    pub timeout_secs: f64,
    pub poll_ms: u64,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig {
            request_dir: PathBuf::from("exchange/request"),
            response_dir: PathBuf::from("exchange/response"),
            timeout_secs: 600.0,
            poll_ms: 50,
        }
    }
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "request"
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Gateway(format!(
            "item id {id:?} is not usable as a file name (allowed: ASCII letters, digits, '-', '_', '.')"
        )))
    }
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Runs one request/response round and returns the response tensors by id.
pub fn run_exchange(cfg: &ExchangeConfig, items: &[ExchangeItem]) -> Result<BTreeMap<String, EncoderOutput>> {
    let req_dir = &cfg.request_dir;
    let resp_dir = &cfg.response_dir;
    for dir in [req_dir, resp_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let marker = resp_dir.join(DONE_MARKER);
    remove_if_exists(&marker)?;

    let mut entries = Vec::with_capacity(items.len());
    let mut seen = std::collections::HashSet::new();
    for item in items {
        check_id(&item.id)?;
        if !seen.insert(item.id.as_str()) {
            return Err(Error::Gateway(format!("duplicate exchange id {:?}", item.id)));
        }
        write_tensor(&item.tensor, req_dir.join(format!("{}.pctf", item.id)))?;
        entries.push(RequestEntry {
            id: item.id.clone(),
            kind: item.kind,
        });
    }
    let request = serde_json::to_string_pretty(&Request { items: entries }).expect("request serializes");
    let tmp = req_dir.join(".request.json.tmp");
    fs::write(&tmp, request).map_err(|e| Error::io(&tmp, e))?;
    let req_path = req_dir.join(REQUEST_FILE);
    fs::rename(&tmp, &req_path).map_err(|e| Error::io(&req_path, e))?;

    let start = Instant::now();
    let timeout = Duration::from_secs_f64(cfg.timeout_secs.max(0.0));
    while !marker.exists() {
        if start.elapsed() >= timeout {
            return Err(Error::ExchangeTimeout {
                seconds: cfg.timeout_secs,
                marker,
            });
        }
        std::thread::sleep(Duration::from_millis(cfg.poll_ms.max(1)));
    }

    let mut out = BTreeMap::new();
    let mut failure = None;
    for item in items {
        let path = resp_dir.join(format!("{}.pctf", item.id));
        if !path.exists() {
            let err_path = resp_dir.join(format!("{}.err", item.id));
            let detail = fs::read_to_string(&err_path)
                .map(|s| format!(": server reported {:?}", s.trim()))
                .unwrap_or_default();
            failure.get_or_insert(Error::Gateway(format!(
                "missing response for id {:?}; expected {}{detail}",
                item.id,
                path.display()
            )));
            continue;
        }
        match read_tensor(&path).and_then(EncoderOutput::from_map) {
            Ok(resp) => {
                out.insert(item.id.clone(), resp);
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }

    for item in items {
        remove_if_exists(&req_dir.join(format!("{}.pctf", item.id)))?;
        remove_if_exists(&resp_dir.join(format!("{}.pctf", item.id)))?;
        remove_if_exists(&resp_dir.join(format!("{}.err", item.id)))?;
    }
    remove_if_exists(&req_path)?;
    remove_if_exists(&marker)?;

    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Encoder backed by an external process speaking the exchange protocol.
/// Encoders own input normalization: tensors are sent as [0, 1] RGB.
#[derive(Debug, Clone)]
pub struct ExchangeEncoder {
    cfg: ExchangeConfig,
}

impl ExchangeEncoder {
    pub fn new(cfg: ExchangeConfig) -> Self {
        ExchangeEncoder { cfg }
    }

    fn pooled(resp: &EncoderOutput) -> Tensor {
        resp.pooled.clone().expect("from_map always pools")
    }
}

fn crop_id(image: &str, j: usize) -> String {
    format!("{image}__crop{j:04}")
}

fn view_id(image: &str, j: usize) -> String {
    format!("{image}__view{j:04}")
}

impl Encoder for ExchangeEncoder {
    fn encode_image(&mut self, key: ItemKey<'_>, img: &Tensor) -> Result<EncoderOutput> {
        let mut out = run_exchange(
            &self.cfg,
            &[ExchangeItem {
                id: key.id.to_string(),
                kind: ItemKind::Image,
                tensor: img.clone(),
            }],
        )?;
        Ok(out.remove(key.id).expect("run_exchange returns every id"))
    }

    fn encode_crops(&mut self, key: ItemKey<'_>, crops: &[Tensor]) -> Result<Vec<Tensor>> {
        let items: Vec<_> = crops
            .iter()
            .enumerate()
            .map(|(j, t)| ExchangeItem {
                id: crop_id(key.id, j),
                kind: ItemKind::Crop,
                tensor: t.clone(),
            })
            .collect();
        let out = run_exchange(&self.cfg, &items)?;
        Ok(items.iter().map(|it| Self::pooled(&out[&it.id])).collect())
    }

    fn encode_views(&mut self, key: ItemKey<'_>, views: &[Tensor]) -> Result<Vec<Tensor>> {
        let items: Vec<_> = views
            .iter()
            .enumerate()
            .map(|(j, t)| ExchangeItem {
                id: view_id(key.id, j),
                kind: ItemKind::Crop,
                tensor: t.clone(),
            })
            .collect();
        let out = run_exchange(&self.cfg, &items)?;
        Ok(items.iter().map(|it| Self::pooled(&out[&it.id])).collect())
    }

    /// Sends the whole batch in a single round.
    fn encode_batch(&mut self, jobs: &[EncodeJob]) -> Result<Vec<EncodedJob>> {
        let mut items = Vec::new();
        for job in jobs {
            if let Some(img) = &job.image {
                items.push(ExchangeItem {
                    id: job.id.clone(),
                    kind: ItemKind::Image,
                    tensor: img.clone(),
                });
            }
            for (j, c) in job.crops.iter().enumerate() {
                items.push(ExchangeItem {
                    id: crop_id(&job.id, j),
                    kind: ItemKind::Crop,
                    tensor: c.clone(),
                });
            }
            for (j, v) in job.views.iter().enumerate() {
                items.push(ExchangeItem {
                    id: view_id(&job.id, j),
                    kind: ItemKind::Crop,
                    tensor: v.clone(),
                });
            }
        }
        let mut out = run_exchange(&self.cfg, &items)?;
        Ok(jobs
            .iter()
            .map(|job| EncodedJob {
                image: job.image.as_ref().map(|_| out.remove(&job.id).expect("image response")),
                crops: (0..job.crops.len())
                    .map(|j| Self::pooled(&out[&crop_id(&job.id, j)]))
                    .collect(),
                views: (0..job.views.len())
                    .map(|j| Self::pooled(&out[&view_id(&job.id, j)]))
                    .collect(),
            })
            .collect())
    }
}

/// Reads a pending request (used by test responders and tooling).
pub fn read_request(request_dir: &Path) -> Result<Option<Vec<(String, ItemKind)>>> {
    let path = request_dir.join(REQUEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let req: Request = serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
    Ok(Some(req.items.into_iter().map(|e| (e.id, e.kind)).collect()))
}
