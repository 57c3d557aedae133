//! Trace notes emitted by nodes and by the runner.

use reconf_core::counter::{AbortReason, Counter};
use reconf_core::labeling::EpochLabel;
use reconf_core::recma::TriggerCause;
use reconf_core::recsa::ResetCause;
use reconf_core::vssmr::{MsgId, View};
use reconf_core::{ConfigValue, PSet, Pid, Proposal};
use reconf_netsim::Note;

/// Per-node state summary, emitted whenever it changes.
#[derive(Clone, Debug, PartialEq)]
pub struct Snap {
    /// `detect_stale()` bits.
    pub stale: u8,
    pub participant: bool,
    pub config: ConfigValue,
    pub prp: Proposal,
    pub degree: u8,
    pub no_reco: bool,
    pub fd: PSet,
    pub part: PSet,
    /// Maximal legit label of the label layer, if running.
    pub max_label: Option<EpochLabel>,
    /// Some stored label or counter was created outside the configuration.
    pub foreign: bool,
    /// The node has run at least one label receipt under its current
    /// configuration.
    pub label_rx: bool,
    /// Injected taint still present.
    pub tainted: bool,
    pub crd: Option<Pid>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Ev {
    Snap(Box<Snap>),
    Reset(ResetCause),
    Restart(PSet),
    Phase(u8, u8),
    Replaced(PSet),
    /// `estab` call by the management layer or the script.
    Estab {
        cause: Option<TriggerCause>,
        set: PSet,
        effective: bool,
    },
    Participate {
        no_reco: bool,
    },
    JoinReset,
    LabelCreated(EpochLabel),
    LabelFlush,
    Rebuilt(PSet),
    CounterLabel(EpochLabel),
    IncStart {
        sid: u64,
        member: bool,
    },
    IncDone {
        sid: u64,
        ct: Counter,
    },
    IncAbort {
        sid: u64,
        reason: AbortReason,
    },
    Fetch(Option<MsgId>),
    Deliver {
        view: Option<Counter>,
        msgs: Vec<MsgId>,
    },
    Proposed(View),
    Installed(View),
    Settled {
        view: Option<Counter>,
        state: Vec<MsgId>,
    },
    Drained(Vec<MsgId>),
    Suspend(bool),
    Script(String),
}

impl Note for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::Snap(_) => "snap",
            Ev::Reset(_) => "reset",
            Ev::Restart(_) => "restart",
            Ev::Phase(..) => "phase",
            Ev::Replaced(_) => "replaced",
            Ev::Estab { .. } => "estab",
            Ev::Participate { .. } => "participate",
            Ev::JoinReset => "join-reset",
            Ev::LabelCreated(_) => "label-created",
            Ev::LabelFlush => "label-flush",
            Ev::Rebuilt(_) => "rebuilt",
            Ev::CounterLabel(_) => "counter-label",
            Ev::IncStart { .. } => "inc-start",
            Ev::IncDone { .. } => "inc-done",
            Ev::IncAbort { .. } => "inc-abort",
            Ev::Fetch(_) => "fetch",
            Ev::Deliver { .. } => "deliver",
            Ev::Proposed(_) => "proposed",
            Ev::Installed(_) => "installed",
            Ev::Settled { .. } => "settled",
            Ev::Drained(_) => "drained",
            Ev::Suspend(_) => "suspend",
            Ev::Script(_) => "script",
        }
    }
}
