import { describe, expect, it } from "vitest";

import { recordPoints, serializeRecord, serializeSubmitBody } from "../src/schema.js";
import { CanvasAnnotation } from "../src/types.js";

describe("serializeRecord", () => {
  it("produces the exact wire bytes for a click", () => {
    const bytes = serializeRecord("img0001", "PP", [{ row: 100, col: 100 }]);
    expect(bytes).toBe('{"fov_id":"img0001","kind":"PP","points":[[100,100]]}');
  });

  it("produces the exact wire bytes for a scribble", () => {
    const bytes = serializeRecord("img0002", "NS", [
      { row: 1, col: 2 },
      { row: 3, col: 4 },
      { row: 5, col: 6 },
    ]);
    expect(bytes).toBe('{"fov_id":"img0002","kind":"NS","points":[[1,2],[3,4],[5,6]]}');
  });

  it("rounds fractional coordinates to integer pixels", () => {
    expect(serializeRecord("a", "NP", [{ row: 9.6, col: 10.2 }])).toBe(
      '{"fov_id":"a","kind":"NP","points":[[10,10]]}',
    );
  });

  it("rejects empty points and unknown kinds", () => {
    expect(() => serializeRecord("a", "PP", [])).toThrow();
    expect(() =>
      serializeRecord("a", "ZZ" as never, [{ row: 0, col: 0 }]),
    ).toThrow();
  });
});

describe("serializeSubmitBody", () => {
  it("wraps records in order", () => {
    const annotations: CanvasAnnotation[] = [
      { kind: "PP", points: [{ row: 1, col: 1 }], state: "pending" },
      { kind: "NP", points: [{ row: 2, col: 2 }], state: "pending" },
    ];
    expect(serializeSubmitBody("img0009", annotations)).toBe(
      '{"records":[{"fov_id":"img0009","kind":"PP","points":[[1,1]]},' +
        '{"fov_id":"img0009","kind":"NP","points":[[2,2]]}]}',
    );
  });
});

describe("recordPoints", () => {
  it("converts stored pairs back to image points", () => {
    expect(recordPoints([[7, 8], [9, 10]])).toEqual([
      { row: 7, col: 8 },
      { row: 9, col: 10 },
    ]);
  });
});
