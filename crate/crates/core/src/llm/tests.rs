use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;

fn cfg(id: &str) -> GenConfig {
    default_config(Stage::Stage1).with_backend(id)
}

fn prompt(text: &str) -> PromptText {
    PromptText { text: text.into(), template_id: crate::prompt::TemplateId::Stage1, metadata: Default::default() }
}

#[test]
fn cache_hit_on_second_call() {
    let gw = Gateway::default();
    let stub = Arc::new(StubBackend::constant("echo", "yes"));
    gw.register(stub.clone()).unwrap();
    let first = gw.complete(&prompt("q"), &cfg("echo")).unwrap();
    let second = gw.complete(&prompt("q"), &cfg("echo")).unwrap();
    assert_eq!(first.text, "yes");
    assert!(!first.cached);
    assert!(second.cached);
    assert_eq!(second.text, "yes");
    assert_eq!(first.request_fingerprint, second.request_fingerprint);
    assert_eq!(stub.calls(), 1);
}

#[test]
fn unknown_backend_is_unavailable() {
    let gw = Gateway::default();
    assert!(matches!(gw.complete(&prompt("q"), &cfg("nope")), Err(GatewayError::BackendUnavailable { .. })));
}

#[test]
fn duplicate_registration_rejected() {
    let gw = Gateway::default();
    gw.register_stub("s", [], StubFallback::Reject).unwrap();
    assert!(matches!(gw.register_stub("s", [], StubFallback::Reject), Err(GatewayError::DuplicateBackendId(_))));
}

#[test]
fn invalid_config_rejected() {
    let gw = Gateway::default();
    gw.register(Arc::new(StubBackend::constant("s", "x"))).unwrap();
    let mut c = cfg("s");
    c.max_tokens = 0;
    assert!(matches!(gw.complete(&prompt("q"), &c), Err(GatewayError::InvalidConfig(_))));
}

struct Flaky {
    failures: usize,
    refuse: bool,
    calls: AtomicUsize,
}

impl ChatBackend for Flaky {
    fn backend_id(&self) -> &str {
        "flaky"
    }
    fn complete(&self, _: &str, _: &GenConfig) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.refuse {
            return Err(BackendError::Refused { status: 400, message: "bad".into() });
        }
        if n < self.failures {
            Err(BackendError::Transient("503".into()))
        } else {
            Ok("ok".into())
        }
    }
}

#[test]
fn transient_failures_are_retried() {
    let gw = Gateway::default().with_retry(RetryPolicy::immediate(3));
    let flaky = Arc::new(Flaky { failures: 2, refuse: false, calls: AtomicUsize::new(0) });
    gw.register(flaky.clone()).unwrap();
    assert_eq!(gw.complete(&prompt("q"), &cfg("flaky")).unwrap().text, "ok");
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let gw = Gateway::default().with_retry(RetryPolicy::immediate(3));
    let flaky = Arc::new(Flaky { failures: 10, refuse: false, calls: AtomicUsize::new(0) });
    gw.register(flaky.clone()).unwrap();
    assert!(matches!(gw.complete(&prompt("q"), &cfg("flaky")), Err(GatewayError::BackendUnavailable { .. })));
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn refusals_are_not_retried() {
    let gw = Gateway::default().with_retry(RetryPolicy::immediate(5));
    let flaky = Arc::new(Flaky { failures: 0, refuse: true, calls: AtomicUsize::new(0) });
    gw.register(flaky.clone()).unwrap();
    assert!(matches!(
        gw.complete(&prompt("q"), &cfg("flaky")),
        Err(GatewayError::BackendRefusedRequest { status: 400, .. })
    ));
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
}

#[test]
fn backoff_grows_and_caps() {
    let p =
        RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(100), max_delay: Duration::from_millis(350) };
    assert_eq!(p.delay(0), Duration::from_millis(100));
    assert_eq!(p.delay(1), Duration::from_millis(200));
    assert_eq!(p.delay(2), Duration::from_millis(350));
    assert_eq!(p.delay(40), Duration::from_millis(350));
}

struct Slow {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl ChatBackend for Slow {
    fn backend_id(&self) -> &str {
        "slow"
    }
    fn complete(&self, prompt: &str, _: &GenConfig) -> Result<String, BackendError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(20));
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(prompt.to_owned())
    }
}

#[test]
fn in_flight_requests_are_bounded() {
    let gw = Arc::new(Gateway::default().with_max_in_flight(2));
    let slow = Arc::new(Slow { current: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
    gw.register(slow.clone()).unwrap();
    std::thread::scope(|s| {
        for i in 0..8 {
            let gw = gw.clone();
            s.spawn(move || gw.complete(&prompt(&format!("q{i}")), &cfg("slow")).unwrap());
        }
    });
    assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    assert_eq!(gw.cache().len(), 8);
}

#[test]
fn persistent_cache_avoids_backend_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let gw = Gateway::new(ResponseCache::open(dir.path()).unwrap());
        gw.register(Arc::new(StubBackend::constant("s", "first"))).unwrap();
        gw.complete(&prompt("q"), &cfg("s")).unwrap();
    }
    let gw = Gateway::new(ResponseCache::open(dir.path()).unwrap());
    let stub = Arc::new(StubBackend::constant("s", "second"));
    gw.register(stub.clone()).unwrap();
    let r = gw.complete(&prompt("q"), &cfg("s")).unwrap();
    assert!(r.cached);
    assert_eq!(r.text, "first");
    assert_eq!(stub.calls(), 0);
}
