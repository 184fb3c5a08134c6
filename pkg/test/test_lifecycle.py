import mock
import pytest
from kgicu.errors import KgIcuError
from kgicu.lifecycle import Event, LifecycleError, State, StateMachine


def _machine():
    idle = State('idle')
    busy = State('busy')
    sm = StateMachine('sm')
    sm.add_state(idle, initial=True)
    sm.add_state(busy)
    return sm, idle, busy


def test_new_sm():
    start_mock = mock.Mock()
    idle_mock = mock.Mock()
    busy_mock = mock.Mock()
    action_mock = mock.Mock()

    class Idle(State):
        def start(self, state, event):
            start_mock(self, event.cargo)

        def on_exit(self, state, event):
            idle_mock(self, 'on_exit')

        def on_enter(self, state, event):
            idle_mock(self, 'on_enter')

        def register_handlers(self):
            self.handlers = {
                'start': self.start,
                'enter': self.on_enter,
                'exit': self.on_exit,
            }

    def enter(state, event):
        busy_mock('busy, enter')

    def exit(state, event):
        busy_mock('busy, exit')

    def action(state, event):
        action_mock('action on transition')

    idle = Idle('idle')
    busy = State('busy')
    busy.handlers = {'enter': enter, 'exit': exit}

    sm = StateMachine('sm')
    sm.add_state(idle, initial=True)
    sm.add_state(busy)
    sm.add_transition(idle, busy, events=['start'], action=action)
    sm.add_transition(busy, idle, events=['stop'])
    sm.initialize()
    assert sm.state == idle

    sm.dispatch(Event('start', batch=3))
    assert sm.state == busy
    assert start_mock.call_count == 1
    assert start_mock.call_args[0] == (idle, {'batch': 3})
    assert idle_mock.call_count == 1
    assert idle_mock.call_args[0] == (idle, 'on_exit')
    assert busy_mock.call_args[0] == ('busy, enter',)
    assert action_mock.call_count == 1
    assert list(sm.history) == [idle]

    sm.dispatch(Event('start'))
    assert sm.state == busy
    assert start_mock.call_count == 1

    sm.dispatch(Event('stop'))
    assert sm.state == idle
    assert idle_mock.call_args[0] == (idle, 'on_enter')
    assert busy_mock.call_args[0] == ('busy, exit',)


def test_callback_order():
    calls = []
    sm, idle, busy = _machine()
    idle.handlers = {'go': lambda s, e: calls.append('handler'),
                     'exit': lambda s, e: calls.append('exit')}
    busy.handlers = {'enter': lambda s, e: calls.append('enter')}

    def condition(state, event):
        calls.append('condition')
        return True

    sm.add_transition(idle, busy, events=['go'], condition=condition,
                      before=lambda s, e: calls.append('before'),
                      action=lambda s, e: calls.append('action'),
                      after=lambda s, e: calls.append('after'))
    sm.initialize()
    sm.dispatch(Event('go'))
    assert calls == ['handler', 'condition', 'before', 'exit', 'action',
                     'enter', 'after']


def test_conditions():
    sm, idle, busy = _machine()
    done = State('done')
    sm.add_state(done)
    sm.add_transition(idle, busy, events=['go'],
                      condition=lambda s, e: e.cargo.get('n', 0) < 5)
    sm.add_transition(idle, done, events=['go'])
    sm.initialize()
    assert sm.can('go')
    sm.dispatch(Event('go', n=10))
    assert sm.state == done

    sm.initialize()
    sm.dispatch(Event('go', n=1))
    assert sm.state == busy


def test_internal_transition():
    action_mock = mock.Mock()
    exit_mock = mock.Mock()
    sm, idle, busy = _machine()
    idle.handlers = {'exit': exit_mock}
    sm.add_transition(idle, None, events=['tick'], action=action_mock)
    sm.initialize()
    sm.dispatch(Event('tick'))
    sm.dispatch(Event('tick'))
    assert sm.state == idle
    assert action_mock.call_count == 2
    assert exit_mock.call_count == 0
    assert len(sm.history) == 0


def test_unknown_event_is_ignored():
    sm, idle, busy = _machine()
    sm.initialize()
    sm.dispatch(Event('nothing'))
    assert sm.state == idle
    assert not sm.can('nothing')


def test_history_is_bounded():
    sm, idle, busy = _machine()
    sm.add_transition(idle, busy, events=['toggle'])
    sm.add_transition(busy, idle, events=['toggle'])
    sm.initialize()
    for _ in range(StateMachine.HISTORY_SIZE + 10):
        sm.dispatch(Event('toggle'))
    assert len(sm.history) == StateMachine.HISTORY_SIZE


def test_add_transition_unknown_state():
    sm, idle, busy = _machine()
    stranger = State('stranger')
    with pytest.raises(LifecycleError) as exc:
        sm.add_transition(idle, stranger, events=['go'])
    assert 'stranger' in str(exc.value)
    with pytest.raises(LifecycleError):
        sm.add_transition(stranger, idle, events=['go'])


def test_events_not_iterable():
    sm, idle, busy = _machine()
    with pytest.raises(LifecycleError):
        sm.add_transition(idle, busy, events=1)
    with pytest.raises(LifecycleError):
        sm.add_transition(idle, busy, events='go')


def test_add_not_a_state_instance():
    sm = StateMachine('sm')
    with pytest.raises(LifecycleError):
        sm.add_state('idle')


def test_no_initial_state():
    sm = StateMachine('sm')
    sm.add_state(State('idle'))
    with pytest.raises(LifecycleError) as exc:
        sm.initialize()
    assert 'Machine "sm" error' in str(exc.value)


def test_many_initial_states():
    sm, idle, busy = _machine()
    with pytest.raises(LifecycleError):
        sm.add_state(State('other'), initial=True)
    with pytest.raises(LifecycleError):
        sm.set_initial_state(busy)


def test_add_state_twice():
    sm, idle, busy = _machine()
    with pytest.raises(LifecycleError):
        sm.add_state(busy)


def test_lifecycle_error_is_a_package_error():
    assert issubclass(LifecycleError, KgIcuError)
