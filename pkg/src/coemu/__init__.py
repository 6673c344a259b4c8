"""coemu: a two-sided verification testbench with a transaction-level link.

The package is split along the host/emulator boundary it models:

* untimed side ("HVL"): `uvm_lite` components, `vip_agents` proxies,
  `testrunner` environments -- no clocks, no pins, only transactions;
* cycle-accurate side ("HDL"): the `hdl_kernel` simulation kernel,
  `vip_agents` bus-functional models and `dut_models` devices;
* `scemi_link` connects the two, in-process or over a localhost socket,
  synchronizing either every clock cycle (lockstep) or only at
  transaction boundaries (transactional).
"""

__version__ = "0.1.0"
