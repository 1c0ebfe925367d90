use std::fmt;

use coinbot::bridge::BridgeError;
use coinbot::collect::CollectError;
use coinbot::evalkit::EvalError;
use coinbot::policy::PolicyError;
use coinbot::recorder::RecorderError;
use coinbot::simworld::SimError;

/// A failed command. The variant picks the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file, task or view.
    Config(String),
    /// Unusable recordings, datasets or checkpoints.
    Data(String),
    /// The policy endpoint could not be reached or went away.
    Endpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Endpoint(_) => 4,
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Endpoint(m) => write!(f, "endpoint error: {m}"),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidTask(_) | SimError::InvalidView(_) => CliError::config(e),
            _ => CliError::data(e),
        }
    }
}

impl From<RecorderError> for CliError {
    fn from(e: RecorderError) -> Self {
        match e {
            // both come from flags: the align rate and the stream rates
            RecorderError::AlignRateTooHigh { .. } | RecorderError::InvalidSpec(_) => CliError::config(e),
            _ => CliError::data(e),
        }
    }
}

impl From<CollectError> for CliError {
    fn from(e: CollectError) -> Self {
        match e {
            CollectError::Sim(e) => e.into(),
            CollectError::Recorder(e) => e.into(),
            CollectError::Translate(e) => CliError::data(e),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::BadRange(_)
            | PolicyError::BadTimestep(_)
            | PolicyError::BadSamplerConfig(_)
            | PolicyError::InvalidSpec(_) => CliError::config(e),
            _ => CliError::data(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EndpointUnavailable { .. } => CliError::Endpoint(e.to_string()),
            EvalError::Policy(p) => p.into(),
            _ => CliError::data(e),
        }
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Protocol(_) => CliError::data(e),
            _ => CliError::Endpoint(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}
