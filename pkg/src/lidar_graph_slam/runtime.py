"""Register-and-dispatch messaging kernel.

Modules never call each other directly: observers receive typed messages,
FIFO dispatch queues buffer them, a single core worker per queue (or queue
group) processes them in order, and notifiers broadcast results to whoever
registered.  Payloads are shared by reference and treated as immutable, so
no copy happens between modules.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Generic, List, Optional, TypeVar

T = TypeVar("T")

log = logging.getLogger(__name__)

_sequence_counter = itertools.count()


@dataclass(frozen=True)
class Message(Generic[T]):
    """Immutable envelope around a shared payload."""

    payload: T
    sequence_id: int = field(default_factory=lambda: next(_sequence_counter))
    timestamp: float = field(default_factory=time.monotonic)


class DispatchQueue(Generic[T]):
    """Thread-safe FIFO buffer of messages.

    ``capacity=None`` means unbounded (batch mode).  A bounded queue applies
    ``policy``: ``"reject"`` makes :meth:`enqueue` return False when full,
    ``"drop_oldest"`` evicts the head to make room (streaming mode).
    """

    def __init__(self, capacity: Optional[int] = None, policy: str = "reject",
                 name: str = ""):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive or None")
        if policy not in ("reject", "drop_oldest"):
            raise ValueError(f"unknown overflow policy {policy!r}")
        self.capacity = capacity
        self.policy = policy
        self.name = name
        self._buf: deque = deque()
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self.dropped = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._buf)

    def enqueue(self, msg: Message[T]) -> bool:
        with self._lock:
            if self.capacity is not None and len(self._buf) >= self.capacity:
                if self.policy == "reject":
                    return False
                self._buf.popleft()
                self.dropped += 1
            self._buf.append(msg)
            self._not_empty.notify()
        return True

    def put(self, payload: T, timestamp: Optional[float] = None) -> bool:
        """Wrap a payload in a Message and enqueue it."""
        if timestamp is None:
            return self.enqueue(Message(payload))
        return self.enqueue(Message(payload, timestamp=timestamp))

    def try_dequeue(self) -> Optional[Message[T]]:
        with self._lock:
            if self._buf:
                return self._buf.popleft()
            return None

    def dequeue(self, timeout: Optional[float] = None) -> Optional[Message[T]]:
        """Blocking pop; returns None on timeout."""
        with self._not_empty:
            if not self._buf:
                self._not_empty.wait(timeout)
            if self._buf:
                return self._buf.popleft()
            return None


class Notifier(Generic[T]):
    """Broadcasts each published message to every registered observer.

    Observers are callables taking a :class:`Message`.  Registration of the
    same handle twice is idempotent.  Delivery is a synchronous call in
    registration order; observers are expected to do no more than enqueue
    into their module's dispatch queue.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self._subscribers: List[Callable[[Message[T]], Any]] = []
        self._ids: dict = {}
        self._next_id = itertools.count()
        self._lock = threading.Lock()

    def register(self, observer: Callable[[Message[T]], Any]) -> int:
        with self._lock:
            key = id(observer)
            if key in self._ids:
                return self._ids[key]
            sub_id = next(self._next_id)
            self._ids[key] = sub_id
            self._subscribers.append(observer)
            return sub_id

    def unregister(self, observer: Callable[[Message[T]], Any]) -> bool:
        with self._lock:
            key = id(observer)
            if key not in self._ids:
                return False
            del self._ids[key]
            self._subscribers.remove(observer)
            return True

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subscribers)

    def notify(self, msg: Message[T]) -> int:
        """Deliver to all current subscribers; returns the delivery count."""
        with self._lock:
            targets = list(self._subscribers)
        for obs in targets:
            obs(msg)
        return len(targets)

    def publish(self, payload: T, timestamp: Optional[float] = None) -> int:
        if timestamp is None:
            return self.notify(Message(payload))
        return self.notify(Message(payload, timestamp=timestamp))


class CoreWorker:
    """One worker thread draining one or more dispatch queues.

    Multiple queues are polled round-robin, one message per queue per pass.
    A handler exception is logged and the message skipped; the worker keeps
    running.  ``stop(drain=True)`` finishes all queued messages before the
    thread exits.
    """

    def __init__(self, queues, handler: Callable[[DispatchQueue, Message], Any],
                 name: str = "core"):
        if isinstance(queues, DispatchQueue):
            queues = [queues]
        if not queues:
            raise ValueError("worker needs at least one queue")
        self._queues = list(queues)
        self._handler = handler
        self._name = name
        self._stop_event = threading.Event()
        self._drain_on_stop = True
        self._thread: Optional[threading.Thread] = None
        self.processed = 0

    def start(self) -> "CoreWorker":
        if self._thread is not None:
            raise RuntimeError("worker already started")
        self._thread = threading.Thread(target=self._run, name=self._name,
                                        daemon=True)
        self._thread.start()
        return self

    def _run(self):
        while True:
            got_any = False
            for q in self._queues:
                msg = q.try_dequeue()
                if msg is None:
                    continue
                got_any = True
                try:
                    self._handler(q, msg)
                except Exception:
                    log.exception("%s: handler failed on message %d, skipping",
                                  self._name, msg.sequence_id)
                self.processed += 1
            if got_any:
                continue
            if self._stop_event.is_set():
                if not self._drain_on_stop or all(len(q) == 0 for q in self._queues):
                    return
                continue
            # idle: block briefly on the first queue, handling whatever arrives
            msg = self._queues[0].dequeue(timeout=0.02)
            if msg is not None:
                try:
                    self._handler(self._queues[0], msg)
                except Exception:
                    log.exception("%s: handler failed on message %d, skipping",
                                  self._name, msg.sequence_id)
                self.processed += 1

    def stop(self, drain: bool = True, timeout: Optional[float] = None):
        self._drain_on_stop = drain
        self._stop_event.set()
        if self._thread is not None:
            self._thread.join(timeout)

    def is_alive(self) -> bool:
        return self._thread is not None and self._thread.is_alive()
