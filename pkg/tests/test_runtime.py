"""Messaging runtime: messages, dispatch queues, notifiers, core workers."""

import threading
import time

import pytest

from lidar_graph_slam.runtime import CoreWorker, DispatchQueue, Message, Notifier


class TestMessage:
    def test_sequence_ids_increase(self):
        a, b = Message("a"), Message("b")
        assert b.sequence_id > a.sequence_id

    def test_payload_shared_by_reference(self):
        payload = [1, 2, 3]
        assert Message(payload).payload is payload

    def test_frozen(self):
        msg = Message("x")
        with pytest.raises(AttributeError):
            msg.payload = "y"


class TestDispatchQueue:
    def test_fifo_order(self):
        q = DispatchQueue()
        for i in range(5):
            q.put(i)
        assert [q.try_dequeue().payload for _ in range(5)] == list(range(5))
        assert q.try_dequeue() is None

    def test_reject_policy_when_full(self):
        q = DispatchQueue(capacity=2, policy="reject")
        assert q.put(1) and q.put(2)
        assert not q.put(3)
        assert len(q) == 2
        assert q.dropped == 0

    def test_drop_oldest_policy(self):
        q = DispatchQueue(capacity=2, policy="drop_oldest")
        q.put(1), q.put(2), q.put(3)
        assert q.dropped == 1
        assert [q.try_dequeue().payload, q.try_dequeue().payload] == [2, 3]

    def test_blocking_dequeue_timeout(self):
        q = DispatchQueue()
        t0 = time.monotonic()
        assert q.dequeue(timeout=0.05) is None
        assert time.monotonic() - t0 >= 0.04

    def test_blocking_dequeue_wakes_on_enqueue(self):
        q = DispatchQueue()
        result = []

        def consumer():
            result.append(q.dequeue(timeout=2.0))

        t = threading.Thread(target=consumer)
        t.start()
        q.put("wake")
        t.join(timeout=2.0)
        assert result and result[0].payload == "wake"

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            DispatchQueue(capacity=0)
        with pytest.raises(ValueError):
            DispatchQueue(policy="explode")


class TestNotifier:
    def test_broadcast_in_registration_order(self):
        n = Notifier()
        seen = []
        n.register(lambda m: seen.append(("a", m.payload)))
        n.register(lambda m: seen.append(("b", m.payload)))
        assert n.publish(7) == 2
        assert seen == [("a", 7), ("b", 7)]

    def test_register_idempotent(self):
        n = Notifier()
        obs = lambda m: None
        first = n.register(obs)
        assert n.register(obs) == first
        assert n.subscriber_count == 1

    def test_unregister(self):
        n = Notifier()
        obs = lambda m: None
        n.register(obs)
        assert n.unregister(obs)
        assert not n.unregister(obs)
        assert n.subscriber_count == 0
        assert n.publish(1) == 0


class TestCoreWorker:
    def test_processes_all_messages(self):
        q = DispatchQueue()
        seen = []
        worker = CoreWorker(q, lambda _q, m: seen.append(m.payload)).start()
        for i in range(20):
            q.put(i)
        worker.stop(drain=True, timeout=5.0)
        assert seen == list(range(20))
        assert worker.processed == 20
        assert not worker.is_alive()

    def test_round_robin_over_queues(self):
        qa, qb = DispatchQueue(name="a"), DispatchQueue(name="b")
        seen = []
        worker = CoreWorker([qa, qb],
                            lambda q, m: seen.append((q.name, m.payload)))
        for i in range(3):
            qa.put(i)
            qb.put(i)
        worker.start()
        worker.stop(drain=True, timeout=5.0)
        assert sorted(seen) == sorted(
            [("a", i) for i in range(3)] + [("b", i) for i in range(3)])
        # one message per queue per pass: strict alternation on equal load
        assert [name for name, _ in seen] == ["a", "b"] * 3

    def test_handler_exception_isolated(self):
        q = DispatchQueue()
        seen = []

        def handler(_q, m):
            if m.payload == 1:
                raise RuntimeError("boom")
            seen.append(m.payload)

        worker = CoreWorker(q, handler).start()
        for i in range(4):
            q.put(i)
        worker.stop(drain=True, timeout=5.0)
        assert seen == [0, 2, 3]
        assert worker.processed == 4

    def test_stop_without_drain_discards_backlog(self):
        q = DispatchQueue()
        worker = CoreWorker(q, lambda _q, m: None)
        for i in range(10):
            q.put(i)
        worker.start()
        worker.stop(drain=False, timeout=5.0)
        # no guarantee on how many ran, only that the thread exited
        assert not worker.is_alive()

    def test_double_start_raises(self):
        worker = CoreWorker(DispatchQueue(), lambda _q, m: None).start()
        with pytest.raises(RuntimeError):
            worker.start()
        worker.stop(timeout=5.0)

    def test_needs_a_queue(self):
        with pytest.raises(ValueError):
            CoreWorker([], lambda _q, m: None)
