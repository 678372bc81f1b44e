import { describe, expect, it } from "vitest";

import { FleetViewModel } from "../src/model.js";
import { manyRows, row, status } from "./helpers.js";

describe("FleetViewModel", () => {
  it("mirrors API silent flags without re-deriving them", () => {
    const vm = new FleetViewModel();
    // last_chunk_at is recent yet the server says silent: the client must
    // show the server's verdict
    const contradictory = row({ silent: true, last_chunk_at: 999_999 });
    vm.applyStatus(status([contradictory]), Date.now());
    expect(vm.rows[0].silent).toBe(true);
    expect(vm.silentCount()).toBe(1);
  });

  it("tracks last good fetch and stale state", () => {
    const vm = new FleetViewModel();
    vm.applyStatus(status([row()]), 12345);
    expect(vm.stale).toBe(false);
    expect(vm.lastGoodAt).toBe(12345);
    vm.markFetchFailed();
    expect(vm.stale).toBe(true);
    expect(vm.lastGoodAt).toBe(12345);
    expect(vm.rows.length).toBe(1); // last good data still shown
  });

  it("refresh reconstructs identical state from the same response", () => {
    const vm1 = new FleetViewModel();
    const vm2 = new FleetViewModel();
    const response = status(manyRows(5, 2));
    vm1.applyStatus(response, 1);
    vm2.applyStatus(response, 1);
    expect(vm1.visibleRows()).toEqual(vm2.visibleRows());
    expect(vm1.silentCount()).toBe(vm2.silentCount());
  });

  it("filters by pseudonym and contact ref", () => {
    const vm = new FleetViewModel();
    vm.applyStatus(status(manyRows(10)), 1);
    vm.filterText = "ref-7";
    expect(vm.visibleRows()).toHaveLength(1);
    vm.filterText = "0000000";
    expect(vm.visibleRows().length).toBeGreaterThan(0);
    vm.filterText = "zzz";
    expect(vm.visibleRows()).toHaveLength(0);
  });

  it("sorts silent rows first by default and toggles direction", () => {
    const vm = new FleetViewModel();
    vm.applyStatus(status(manyRows(4, 2)), 1);
    expect(vm.visibleRows()[0].silent).toBe(true);
    vm.setSort("silent");
    expect(vm.visibleRows().at(-1)!.silent).toBe(true);
    vm.setSort("chunks_total");
    expect(vm.sortKey).toBe("chunks_total");
  });

  it("keeps one pending badge per participant and clears on delivery", () => {
    const vm = new FleetViewModel();
    const target = row({ pending_commands: [] });
    vm.applyStatus(status([target]), 1);
    vm.markSyncRequested(target.pseudonym);
    vm.markSyncRequested(target.pseudonym); // double click: still one badge
    expect(vm.hasPendingSync(target.pseudonym)).toBe(true);

    // server still queues the command: badge stays
    vm.applyStatus(status([row({ pending_commands: ["force_sync_wifi"] })]), 2);
    expect(vm.hasPendingSync(target.pseudonym)).toBe(true);

    // command delivered: no longer pending server-side, badge clears
    vm.applyStatus(status([row({ pending_commands: [] })]), 3);
    expect(vm.hasPendingSync(target.pseudonym)).toBe(false);
  });

  it("marks erased participants unknown", () => {
    const vm = new FleetViewModel();
    const target = row();
    vm.applyStatus(status([target]), 1);
    vm.markSyncRequested(target.pseudonym);
    vm.markUnknown(target.pseudonym);
    expect(vm.isUnknown(target.pseudonym)).toBe(true);
    expect(vm.hasPendingSync(target.pseudonym)).toBe(false);
  });

  it("computes last-sync age from the server clock", () => {
    const vm = new FleetViewModel();
    vm.applyStatus(status([row({ last_chunk_at: 400 })], 1000), 1);
    expect(vm.lastSyncAgeMs(vm.rows[0])).toBe(600);
    vm.applyStatus(status([row({ last_chunk_at: null })], 1000), 2);
    expect(vm.lastSyncAgeMs(vm.rows[0])).toBeNull();
  });
});
