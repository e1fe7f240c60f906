use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding in-flight requests for one endpoint.
#[derive(Debug)]
pub struct Limiter {
    max: usize,
    state: Mutex<State>,
    cv: Condvar,
}

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    peak: usize,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(max: usize) -> Limiter {
        Limiter {
            max: max.max(1),
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().unwrap();
        while s.in_flight >= self.max {
            s = self.cv.wait(s).unwrap();
        }
        s.in_flight += 1;
        s.peak = s.peak.max(s.in_flight);
        Permit { limiter: self }
    }

    /// Highest number of permits held at once so far.
    pub fn peak(&self) -> usize {
        self.state.lock().unwrap().peak
    }

    pub fn max(&self) -> usize {
        self.max
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.limiter.state.lock().unwrap();
        s.in_flight -= 1;
        drop(s);
        self.limiter.cv.notify_one();
    }
}
