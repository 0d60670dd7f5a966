"""Two-type branching processes in constant, IID and Markov random environments.

Type-1 particles reproduce according to the current environment state and
produce type-2 daughters; type-2 particles follow a fixed critical law.  The
package simulates the process, computes survival probabilities exactly given
the environment, estimates them by Monte Carlo, and checks the asymptotic
laws of survival and of total progeny.
"""

__version__ = "0.1.0"
