'''Small flat state machines for object lifecycles.

A few objects in :mod:`kgicu` move through well defined phases: an autodiff
tape records operations until it is differentiated, a training run alternates
between training and validation epochs until it finishes. Their rules are
expressed with the classes in this module instead of ad hoc boolean flags.

The order of calls on :func:`StateMachine.dispatch` is:

    1. State's event handler
    2. `condition` callback
    3. `before` callback
    4. `exit` handler of the source state
    5. `action` callback
    6. `enter` handler of the target state
    7. `after` callback

Events without a handler or a transition are silently ignored, unless a state
handler decides to raise.

.. |StateMachine| replace:: :class:`~.StateMachine`
.. |State| replace:: :class:`~.State`

'''
import logging
from collections import defaultdict, deque

from .errors import KgIcuError

logger = logging.getLogger(__name__)


class LifecycleError(KgIcuError):
    '''Raised when a |StateMachine| is assembled incorrectly.'''
    pass


class Event(object):
    r'''Triggers handlers and transitions in a |StateMachine|.

    :param name: Name of an event. Anything hashable.
    :param \*\*cargo: Data transported to handlers, available as the `cargo`
        dict. For `enter` and `exit` events the triggering event is passed
        as `cargo['source_event']`.
    '''
    def __init__(self, name, **cargo):
        self.name = name
        self.cargo = cargo
        self.state_machine = None

    def __repr__(self):
        return '<Event {0}, cargo={1}>'.format(self.name, self.cargo)


class State(object):
    '''A named phase of a lifecycle.

    Handlers are kept in the `handlers` dict keyed by event name and take two
    arguments, the handling `state` and the `event`. Subclasses register them
    in :func:`register_handlers`.

    :param name: Human readable state name
    :type name: str
    '''
    def __init__(self, name):
        self.name = name
        self.handlers = {}
        self.initial = False
        self.register_handlers()

    def __repr__(self):
        return '<State {0}>'.format(self.name)

    def register_handlers(self):
        '''Hook method to register event handlers in subclasses.'''
        pass

    def _on(self, event):
        if event.name in self.handlers:
            self.handlers[event.name](self, event)


def _nop(state, event):
    return True


class StateMachine(object):
    '''Flat state machine: one current state and keyed transitions.

    **Attributes:**

        .. attribute:: state

            Current state (instance of |State|).

        .. attribute:: history

            Previous states, most recent last. Only
            :attr:`StateMachine.HISTORY_SIZE` entries are kept.

    :param name: Human readable machine name, used in error messages
    :type name: str

    **Example Usage:**

    .. code-block:: python

        machine = StateMachine('tape')
        recording = State('recording')
        consumed = State('consumed')
        machine.add_state(recording, initial=True)
        machine.add_state(consumed)
        machine.add_transition(recording, consumed, events=['backward'])
        machine.initialize()
        machine.dispatch(Event('backward'))

    '''
    HISTORY_SIZE = 32

    def __init__(self, name):
        self.name = name
        self.states = []
        self.state = None
        self.history = deque(maxlen=StateMachine.HISTORY_SIZE)
        self._transitions = defaultdict(list)

    def __repr__(self):
        return '<StateMachine {0} in {1}>'.format(self.name, self.state)

    def add_state(self, state, initial=False):
        '''Add a state. Exactly one state has to be declared `initial`.

        :param state: State to be added
        :type state: |State|
        :param initial: Declare the state as initial
        :type initial: bool
        '''
        Validator(self).validate_add_state(state, initial)
        state.initial = initial
        self.states.append(state)

    def add_states(self, *states):
        for state in states:
            self.add_state(state)

    def set_initial_state(self, state):
        Validator(self).validate_set_initial(state)
        state.initial = True

    @property
    def initial_state(self):
        for state in self.states:
            if state.initial:
                return state
        return None

    def add_transition(self, from_state, to_state, events, condition=None,
                       action=None, before=None, after=None):
        '''Add a transition.

        Several transitions may share a (state, event) key; the first one
        whose `condition` returns `True` is taken, which gives
        if/elif/else-like rules.

        :param from_state: Source state
        :type from_state: |State|
        :param to_state: Target state. `None` makes it an internal transition
            (callbacks run, no exit/enter)
        :type to_state: |State|, `None`
        :param events: Event names that trigger the transition
        :type events: iterable
        :param condition: `condition(state, event)`, transition allowed when it
            returns `True`
        :param action: Called between exit and enter
        :param before: Called before leaving the source state
        :param after: Called once the target state is entered
        '''
        Validator(self).validate_add_transition(from_state, to_state, events)
        for event in events:
            self._transitions[(from_state, event)].append({
                'from_state': from_state,
                'to_state': to_state,
                'condition': condition or _nop,
                'action': action or _nop,
                'before': before or _nop,
                'after': after or _nop,
            })

    def initialize(self):
        '''Enter the initial state. Call once all states are added.'''
        Validator(self).validate_initial_state()
        self.state = self.initial_state
        self.history.clear()

    def _get_transition(self, event):
        for transition in self._transitions[(self.state, event.name)]:
            if transition['condition'](self.state, event) is True:
                return transition
        return None

    def can(self, event_name):
        '''Check whether `event_name` would trigger a transition now.'''
        return self._get_transition(Event(event_name)) is not None

    def dispatch(self, event):
        '''Dispatch an event to the machine.

        :param event: Event to be dispatched
        :type event: :class:`.Event`
        '''
        event.state_machine = self
        source = self.state
        source._on(event)
        transition = self._get_transition(event)
        if transition is None:
            return
        to_state = transition['to_state']
        transition['before'](source, event)
        if to_state is not None:
            logger.debug('%s: exiting %s', self.name, source.name)
            source._on(Event('exit', source_event=event))
        transition['action'](source, event)
        if to_state is not None:
            self.history.append(source)
            self.state = to_state
            logger.debug('%s: entering %s', self.name, to_state.name)
            to_state._on(Event('enter', source_event=event))
        transition['after'](self.state, event)


class Validator(object):
    def __init__(self, state_machine):
        self.state_machine = state_machine
        self.template = 'Machine "{0}" error: {1}'.format(
            self.state_machine.name, '{0}')

    def _raise(self, msg):
        raise LifecycleError(self.template.format(msg))

    def validate_add_state(self, state, initial):
        if not isinstance(state, State):
            self._raise('Unable to add state of type {0}'.format(type(state)))
        if state in self.state_machine.states:
            self._raise('State "{0}" is already added'.format(state.name))
        if initial is True:
            self.validate_set_initial(state)

    def validate_set_initial(self, state):
        for added_state in self.state_machine.states:
            if added_state.initial is True and added_state is not state:
                self._raise('Unable to set initial state to "{0}". '
                            'Initial state is already set to "{1}"'
                            .format(state.name, added_state.name))

    def validate_add_transition(self, from_state, to_state, events):
        if from_state not in self.state_machine.states:
            self._raise('Unable to add transition from unknown state "{0}"'
                        .format(from_state.name))
        if to_state is not None and to_state not in self.state_machine.states:
            self._raise('Unable to add transition to unknown state "{0}"'
                        .format(to_state.name))
        if isinstance(events, str):
            self._raise('Unable to add transition, events must be a '
                        'collection of names, got {0!r}'.format(events))
        try:
            iter(events)
        except TypeError:
            self._raise('Unable to add transition, events is not iterable: '
                        '{0}'.format(events))

    def validate_initial_state(self):
        if not self.state_machine.initial_state:
            self._raise('Machine has no initial state')
