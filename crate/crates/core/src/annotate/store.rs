//! Append-only JSON Lines journal with periodic snapshots.
//!
//! Every mutation is one or more journal lines `{"seq": n, "event": ...}`,
//! written and synced before the caller is acknowledged. A snapshot holds the
//! full state at some `seq`; on open, the snapshot is loaded and journal lines
//! with `seq <=` the snapshot's are skipped. A torn final line (a crash
//! mid-write) is dropped, since it was never acknowledged.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{
    task_id, Ack, AnnotateError, AnnotationTask, CreateOptions, CritiqueExportRow, CritiqueOutcome, CritiquePayload,
    KindProgress, Submission, SubmissionBody, TaskAggregate, TaskDetail, TaskKind, TaskStatus, TaskView,
};
use crate::classify::SentenceLabel;
use crate::corpus::{aggregate_judgments, write_corpus, CaptionRecord, RaterJudgment};

const JOURNAL: &str = "journal.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq)]
pub struct StoreOptions {
    /// Snapshot after this many journal events; 0 disables automatic
    /// snapshots.
    pub snapshot_every: usize,
    /// fsync each journal write before acknowledging.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            snapshot_every: 1000,
            sync: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    captions: BTreeMap<String, CaptionRecord>,
    tasks: BTreeMap<String, TaskEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskEntry {
    task: AnnotationTask,
    submissions: BTreeMap<String, Submission>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregate: Option<TaskAggregate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Caption { record: CaptionRecord },
    Task { task: AnnotationTask },
    Submission { submission: Submission },
    Complete { task_id: String, aggregate: TaskAggregate },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalLine {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: State,
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::Caption { record } => {
                self.captions.entry(record.caption_id.clone()).or_insert(record);
            }
            Event::Task { task } => {
                self.tasks.entry(task.task_id.clone()).or_insert(TaskEntry {
                    task,
                    submissions: BTreeMap::new(),
                    aggregate: None,
                });
            }
            Event::Submission { submission } => {
                if let Some(e) = self.tasks.get_mut(&submission.task_id) {
                    if e.task.status == TaskStatus::Open {
                        e.submissions.insert(submission.rater_id.clone(), submission);
                    }
                }
            }
            Event::Complete { task_id, aggregate } => {
                if let Some(e) = self.tasks.get_mut(&task_id) {
                    if e.task.status == TaskStatus::Open {
                        e.task.status = TaskStatus::Complete;
                        e.aggregate = Some(aggregate);
                    }
                }
            }
        }
    }

    fn view(&self, e: &TaskEntry) -> TaskView {
        let caption = &self.captions[&e.task.caption_id];
        let span = caption.sentences[e.task.sentence_index];
        TaskView {
            task: e.task.clone(),
            image_ref: caption.image_ref.clone(),
            text: caption.text.clone(),
            span,
            sentence: caption.sentence(e.task.sentence_index).to_string(),
            submission_count: e.submissions.len(),
        }
    }
}

fn aggregate(entry: &TaskEntry) -> Result<TaskAggregate, AnnotateError> {
    match entry.task.kind {
        TaskKind::SentenceFactuality => {
            let judgments: Vec<RaterJudgment> = entry
                .submissions
                .values()
                .filter_map(|s| s.to_rater_judgment(entry.task.sentence_index))
                .collect();
            Ok(TaskAggregate::Factuality(aggregate_judgments(&judgments)?))
        }
        TaskKind::CritiqueReview => {
            let positive = entry
                .submissions
                .values()
                .filter(|s| matches!(s.body, SubmissionBody::Critique(a) if a.critique_correct))
                .count();
            let negative = entry.submissions.len() - positive;
            Ok(TaskAggregate::Critique(CritiqueOutcome {
                positive,
                negative,
                correct: positive > negative,
            }))
        }
    }
}

struct Inner {
    seq: u64,
    state: State,
    journal: File,
    since_snapshot: usize,
}

pub struct Store {
    dir: PathBuf,
    opts: StoreOptions,
    inner: Mutex<Inner>,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>, opts: StoreOptions) -> Result<Self, AnnotateError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let (mut seq, mut state) = match std::fs::read(dir.join(SNAPSHOT)) {
            Ok(raw) => {
                let snap: Snapshot = serde_json::from_slice(&raw).map_err(|e| AnnotateError::Corrupt {
                    line: 0,
                    reason: format!("snapshot: {e}"),
                })?;
                (snap.seq, snap.state)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0, State::default()),
            Err(e) => return Err(e.into()),
        };

        let path = dir.join(JOURNAL);
        let mut journal = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut since_snapshot = 0;
        let mut good_len = 0u64;
        let mut needs_newline = false;
        {
            let mut reader = BufReader::new(&journal);
            let mut buf = Vec::new();
            let mut line_no = 0;
            loop {
                buf.clear();
                let n = reader.read_until(b'\n', &mut buf)?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                let complete_line = buf.ends_with(b"\n");
                let body = buf.trim_ascii();
                if body.is_empty() {
                    good_len += n as u64;
                    continue;
                }
                match serde_json::from_slice::<JournalLine>(body) {
                    Ok(line) => {
                        good_len += n as u64;
                        needs_newline = !complete_line;
                        if line.seq > seq {
                            seq = line.seq;
                            state.apply(line.event);
                            since_snapshot += 1;
                        }
                    }
                    Err(e) => {
                        // only the final line may be torn
                        let mut rest = Vec::new();
                        std::io::Read::read_to_end(&mut reader, &mut rest)?;
                        if !complete_line || rest.trim_ascii().is_empty() {
                            break;
                        }
                        return Err(AnnotateError::Corrupt {
                            line: line_no,
                            reason: e.to_string(),
                        });
                    }
                }
            }
        }
        if journal.metadata()?.len() != good_len {
            journal.set_len(good_len)?;
        }
        journal.seek(SeekFrom::End(0))?;
        if needs_newline {
            journal.write_all(b"\n")?;
        }

        let store = Self {
            dir,
            opts,
            inner: Mutex::new(Inner {
                seq,
                state,
                journal,
                since_snapshot,
            }),
        };
        store.complete_pending()?;
        Ok(store)
    }

    /// Completes tasks that reached their rater count but whose completion
    /// event was lost to a crash between the two writes.
    fn complete_pending(&self) -> Result<(), AnnotateError> {
        let mut inner = self.inner.lock().unwrap();
        let pending: Vec<Event> = inner
            .state
            .tasks
            .values()
            .filter(|e| e.task.status == TaskStatus::Open && e.submissions.len() >= e.task.required_raters)
            .map(|e| {
                Ok(Event::Complete {
                    task_id: e.task.task_id.clone(),
                    aggregate: aggregate(e)?,
                })
            })
            .collect::<Result<_, AnnotateError>>()?;
        self.commit(&mut inner, pending)?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join(JOURNAL)
    }

    /// Writes events durably, then applies them. Returns the last seq.
    fn commit(&self, inner: &mut Inner, events: Vec<Event>) -> Result<u64, AnnotateError> {
        if events.is_empty() {
            return Ok(inner.seq);
        }
        let mut buf = Vec::new();
        let mut seq = inner.seq;
        for event in &events {
            seq += 1;
            serde_json::to_writer(&mut buf, &JournalLine { seq, event: event.clone() }).expect("events serialize");
            buf.push(b'\n');
        }
        inner.journal.write_all(&buf)?;
        inner.journal.flush()?;
        if self.opts.sync {
            inner.journal.sync_data()?;
        }
        inner.since_snapshot += events.len();
        for event in events {
            inner.state.apply(event);
        }
        inner.seq = seq;
        if self.opts.snapshot_every > 0 && inner.since_snapshot >= self.opts.snapshot_every {
            self.snapshot_locked(inner)?;
        }
        Ok(seq)
    }

    fn snapshot_locked(&self, inner: &mut Inner) -> Result<(), AnnotateError> {
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(
                &mut f,
                &Snapshot {
                    seq: inner.seq,
                    state: inner.state.clone(),
                },
            )
            .map_err(std::io::Error::other)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        // lines up to inner.seq are now redundant; a crash before this point
        // leaves them in place and they are skipped on replay
        inner.journal.set_len(0)?;
        inner.journal.seek(SeekFrom::Start(0))?;
        inner.since_snapshot = 0;
        Ok(())
    }

    pub fn snapshot(&self) -> Result<(), AnnotateError> {
        let mut inner = self.inner.lock().unwrap();
        self.snapshot_locked(&mut inner)
    }

    /// Creates the tasks of `kind` for `corpus`; returns how many were new.
    pub fn create_tasks(
        &self,
        corpus: &[CaptionRecord],
        kind: TaskKind,
        opts: &CreateOptions<'_>,
    ) -> Result<usize, AnnotateError> {
        if opts.required_raters == 0 {
            return Err(AnnotateError::invalid("required_raters", "must be at least 1"));
        }
        let by_id: BTreeMap<&str, &CaptionRecord> = corpus.iter().map(|r| (r.caption_id.as_str(), r)).collect();
        let mut wanted: Vec<(&CaptionRecord, usize, Option<CritiquePayload>)> = Vec::new();
        match kind {
            TaskKind::SentenceFactuality => {
                for r in corpus {
                    r.validate()?;
                    wanted.extend((0..r.sentence_count()).map(|i| (r, i, None)));
                }
            }
            TaskKind::CritiqueReview => {
                let sources = opts.critiques.ok_or(AnnotateError::MissingCritiques)?;
                for src in sources {
                    for cj in &src.judgments {
                        let r = *by_id
                            .get(cj.caption_id.as_str())
                            .ok_or_else(|| AnnotateError::UnknownCaption(cj.caption_id.clone()))?;
                        for j in &cj.judgments {
                            let Some(critique) = j.critique.as_ref().filter(|_| j.label == SentenceLabel::Inaccurate) else {
                                continue;
                            };
                            if j.sentence_index >= r.sentence_count() {
                                return Err(AnnotateError::invalid(
                                    "sentence_index",
                                    format!("{} has no sentence {}", r.caption_id, j.sentence_index),
                                ));
                            }
                            wanted.push((
                                r,
                                j.sentence_index,
                                Some(CritiquePayload {
                                    critic: src.critic.clone(),
                                    critique: critique.clone(),
                                }),
                            ));
                        }
                    }
                }
            }
        }

        let mut inner = self.inner.lock().unwrap();
        let mut events = Vec::new();
        let mut new_captions = std::collections::BTreeSet::new();
        let mut new_tasks = std::collections::BTreeSet::new();
        for (r, i, payload) in wanted {
            let id = task_id(kind, &r.caption_id, i, payload.as_ref().map(|p| p.critic.as_str()));
            if inner.state.tasks.contains_key(&id) || !new_tasks.insert(id.clone()) {
                continue;
            }
            if !inner.state.captions.contains_key(&r.caption_id) && new_captions.insert(r.caption_id.clone()) {
                let mut bare = r.clone();
                bare.annotations.clear();
                events.push(Event::Caption { record: bare });
            }
            events.push(Event::Task {
                task: AnnotationTask {
                    task_id: id,
                    kind,
                    caption_id: r.caption_id.clone(),
                    sentence_index: i,
                    payload,
                    required_raters: opts.required_raters,
                    status: TaskStatus::Open,
                },
            });
        }
        let created = new_tasks.len();
        self.commit(&mut inner, events)?;
        Ok(created)
    }

    /// An open task of `kind` this rater has not answered: fewest submissions
    /// first, then lowest task id.
    pub fn next_task(&self, rater_id: &str, kind: TaskKind) -> Option<TaskView> {
        let inner = self.inner.lock().unwrap();
        let state = &inner.state;
        state
            .tasks
            .values()
            .filter(|e| {
                e.task.kind == kind && e.task.status == TaskStatus::Open && !e.submissions.contains_key(rater_id)
            })
            .min_by(|a, b| {
                a.submissions
                    .len()
                    .cmp(&b.submissions.len())
                    .then_with(|| a.task.task_id.cmp(&b.task.task_id))
            })
            .map(|e| state.view(e))
    }

    /// Validates and durably records a submission. The submission that
    /// brings a task to its rater count also records the aggregate.
    pub fn submit(&self, mut sub: Submission) -> Result<Ack, AnnotateError> {
        let mut inner = self.inner.lock().unwrap();
        let entry = inner
            .state
            .tasks
            .get(&sub.task_id)
            .ok_or_else(|| AnnotateError::UnknownTask(sub.task_id.clone()))?;
        if entry.task.status == TaskStatus::Complete {
            return Err(AnnotateError::TaskComplete(sub.task_id.clone()));
        }
        if sub.rater_id.trim().is_empty() {
            return Err(AnnotateError::invalid("rater_id", "must not be empty"));
        }
        if sub.body.kind() != entry.task.kind {
            return Err(AnnotateError::invalid(
                "body",
                format!("a {} task needs a {} answer", entry.task.kind.as_str(), entry.task.kind.as_str()),
            ));
        }
        if let Some(j) = sub.to_rater_judgment(entry.task.sentence_index) {
            j.validate().map_err(|(field, reason)| AnnotateError::invalid(field, reason))?;
        }
        sub.submitted_at.get_or_insert_with(Utc::now);

        let replaced = entry.submissions.contains_key(&sub.rater_id);
        let mut after = entry.clone();
        after.submissions.insert(sub.rater_id.clone(), sub.clone());
        let distinct = after.submissions.len();
        let mut events = vec![Event::Submission { submission: sub.clone() }];
        let status = if distinct >= after.task.required_raters {
            events.push(Event::Complete {
                task_id: sub.task_id.clone(),
                aggregate: aggregate(&after)?,
            });
            TaskStatus::Complete
        } else {
            TaskStatus::Open
        };
        let seq = self.commit(&mut inner, events)?;
        Ok(Ack {
            task_id: sub.task_id,
            rater_id: sub.rater_id,
            seq,
            replaced,
            distinct_raters: distinct,
            status,
        })
    }

    pub fn task(&self, task_id: &str) -> Option<TaskDetail> {
        let inner = self.inner.lock().unwrap();
        let e = inner.state.tasks.get(task_id)?;
        let complete = e.task.status == TaskStatus::Complete;
        Some(TaskDetail {
            view: inner.state.view(e),
            submissions: complete.then(|| e.submissions.values().cloned().collect()),
            aggregate: e.aggregate.clone(),
        })
    }

    pub fn tasks(&self, kind: TaskKind) -> Vec<AnnotationTask> {
        let inner = self.inner.lock().unwrap();
        inner.state.tasks.values().filter(|e| e.task.kind == kind).map(|e| e.task.clone()).collect()
    }

    pub fn progress(&self) -> BTreeMap<TaskKind, KindProgress> {
        let inner = self.inner.lock().unwrap();
        let mut out: BTreeMap<TaskKind, KindProgress> = TaskKind::ALL.iter().map(|&k| (k, KindProgress::default())).collect();
        for e in inner.state.tasks.values() {
            let p = out.get_mut(&e.task.kind).expect("all kinds present");
            match e.task.status {
                TaskStatus::Open => p.open += 1,
                TaskStatus::Complete => p.complete += 1,
            }
        }
        out
    }

    /// Number of (task, rater) submissions currently held.
    pub fn submission_count(&self) -> usize {
        let inner = self.inner.lock().unwrap();
        inner.state.tasks.values().map(|e| e.submissions.len()).sum()
    }

    pub fn has_submission(&self, task_id: &str, rater_id: &str) -> bool {
        let inner = self.inner.lock().unwrap();
        inner.state.tasks.get(task_id).is_some_and(|e| e.submissions.contains_key(rater_id))
    }

    /// Captions with their collected factuality judgments, in caption-id
    /// order, in corpus format.
    pub fn export_corpus(&self) -> Vec<CaptionRecord> {
        let inner = self.inner.lock().unwrap();
        let mut by_caption: BTreeMap<&str, Vec<RaterJudgment>> = BTreeMap::new();
        for e in inner.state.tasks.values() {
            if e.task.kind != TaskKind::SentenceFactuality {
                continue;
            }
            let js = by_caption.entry(e.task.caption_id.as_str()).or_default();
            js.extend(e.submissions.values().filter_map(|s| s.to_rater_judgment(e.task.sentence_index)));
        }
        by_caption
            .into_iter()
            .map(|(id, mut js)| {
                js.sort_by(|a, b| (a.sentence_index, &a.rater_id).cmp(&(b.sentence_index, &b.rater_id)));
                let mut r = inner.state.captions[id].clone();
                r.annotations = js;
                r
            })
            .collect()
    }

    /// Per-critic share of complete critique reviews judged correct.
    pub fn export_critique_rows(&self) -> Vec<CritiqueExportRow> {
        let inner = self.inner.lock().unwrap();
        let mut rows: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for e in inner.state.tasks.values() {
            let Some(p) = &e.task.payload else { continue };
            let row = rows.entry(p.critic.as_str()).or_default();
            if let Some(TaskAggregate::Critique(o)) = &e.aggregate {
                row.0 += 1;
                row.1 += usize::from(o.correct);
            }
        }
        rows.into_iter()
            .map(|(critic, (n, k))| CritiqueExportRow {
                critic: critic.to_string(),
                complete_tasks: n,
                judged_correct: k,
                pct_correct: (n > 0).then(|| 100.0 * k as f64 / n as f64),
            })
            .collect()
    }

    /// JSON Lines export of one task kind.
    pub fn export(&self, kind: TaskKind, out: impl Write) -> Result<(), AnnotateError> {
        match kind {
            TaskKind::SentenceFactuality => write_corpus(&self.export_corpus(), out)?,
            TaskKind::CritiqueReview => {
                let mut out = out;
                for row in self.export_critique_rows() {
                    serde_json::to_writer(&mut out, &row).map_err(std::io::Error::other)?;
                    out.write_all(b"\n")?;
                }
                out.flush()?;
            }
        }
        Ok(())
    }
}
