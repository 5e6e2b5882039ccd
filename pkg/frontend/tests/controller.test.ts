import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import { ViewState } from "../src/store.js";
import { CanvasAnnotation } from "../src/types.js";
import { FakeServer } from "./fakeServer.js";

function pp(row: number, col: number): CanvasAnnotation {
  return { kind: "PP", points: [{ row, col }], state: "pending" };
}

describe("SessionController", () => {
  let server: FakeServer;
  let controller: SessionController;

  beforeEach(async () => {
    server = new FakeServer({ height: 128, width: 128 });
    controller = new SessionController(new ApiClient("", server.fetch), new ViewState());
    await controller.openImage(new Uint8Array([1, 2, 3]));
  });

  it("submitting three points raises the server count by three", async () => {
    controller.view.buffer.add(pp(10, 10));
    controller.view.buffer.add(pp(20, 20));
    controller.view.buffer.add(pp(30, 30));
    const outcome = await controller.submitBuffer();
    expect(outcome.ok).toBe(true);
    expect(outcome.unconsumedCount).toBe(3);
    expect(server.unconsumedCount()).toBe(3);
    expect(controller.view.buffer.pendingCount).toBe(0);
    expect(controller.view.buffer.submittedAnnotations).toHaveLength(3);
  });

  it("a failed POST retains the buffer and offers retry", async () => {
    controller.view.buffer.add(pp(10, 10));
    server.failNextRequests = 1;
    const outcome = await controller.submitBuffer();
    expect(outcome.ok).toBe(false);
    expect(outcome.retryAvailable).toBe(true);
    expect(controller.view.buffer.pendingCount).toBe(1);
    expect(server.unconsumedCount()).toBe(0);
    // the retry succeeds with the same buffer
    const retry = await controller.submitBuffer();
    expect(retry.ok).toBe(true);
    expect(server.unconsumedCount()).toBe(1);
  });

  it("a rejected record (HTTP 400) also retains the buffer", async () => {
    controller.view.buffer.add(pp(9999, 0));
    const outcome = await controller.submitBuffer();
    expect(outcome.ok).toBe(false);
    expect(controller.view.buffer.pendingCount).toBe(1);
  });

  it("reports fine-tuning when the trigger crosses", async () => {
    server.trigger = 2;
    controller.view.buffer.add(pp(1, 1));
    controller.view.buffer.add(pp(2, 2));
    const outcome = await controller.submitBuffer();
    expect(outcome.finetuneRunning).toBe(true);
  });

  it("suggests re-detection when the active model changes", async () => {
    await controller.detect();
    expect(controller.redetectSuggested).toBe(false);
    server.completeFinetune("m0002");
    await controller.pollModels();
    expect(controller.redetectSuggested).toBe(true);
  });

  it("refreshAnnotations mirrors the server records", async () => {
    controller.view.buffer.add(pp(5, 7));
    controller.view.buffer.add({
      kind: "NS",
      points: [
        { row: 1, col: 1 },
        { row: 2, col: 2 },
      ],
      state: "pending",
    });
    await controller.submitBuffer();
    await controller.refreshAnnotations();
    const mirrored = controller.view.buffer.submittedAnnotations;
    expect(mirrored).toHaveLength(2);
    expect(mirrored[0].points).toEqual([{ row: 5, col: 7 }]);
    expect(mirrored[1].points).toEqual([
      { row: 1, col: 1 },
      { row: 2, col: 2 },
    ]);
  });
});
