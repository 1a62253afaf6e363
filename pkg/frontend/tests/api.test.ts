import assert from "node:assert/strict";
import { test } from "node:test";

import { ApiError, MixforgeClient } from "../src/api.js";
import type { FetchLike } from "../src/api.js";

function fakeResponse(status: number, body: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  } as unknown as Response;
}

function clientWith(routes: Record<string, { status: number; body: unknown }>): {
  client: MixforgeClient;
  calls: { url: string; init?: RequestInit }[];
} {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    calls.push({ url, init });
    const path = url.replace("http://svc", "");
    const route = routes[path];
    if (!route) throw new Error(`no route for ${path}`);
    return fakeResponse(route.status, route.body);
  };
  return { client: new MixforgeClient("http://svc", fetchFn), calls };
}

test("schema round trip", async () => {
  const schema = {
    name: "uhpc-mixture-v1",
    columns: [],
    targets: ["Porosity"],
    features_used: { Porosity: ["Cement content"] },
    strict_ranges: false,
  };
  const { client } = clientWith({ "/schema": { status: 200, body: schema } });
  assert.deepEqual(await client.schema(), schema);
});

test("predict posts the mix as JSON", async () => {
  const body = { predictions: {}, warnings: [] };
  const { client, calls } = clientWith({ "/predict": { status: 200, body } });
  await client.predict({ "Cement content": 797.21 });
  assert.equal(calls.length, 1);
  assert.equal(calls[0]!.init?.method, "POST");
  assert.deepEqual(JSON.parse(String(calls[0]!.init?.body)), { "Cement content": 797.21 });
});

test("422 becomes ApiError carrying the named feature", async () => {
  const { client } = clientWith({
    "/predict": { status: 422, body: { error: "missing required feature", feature: "Water content" } },
  });
  await assert.rejects(
    () => client.predict({}),
    (err: unknown) => {
      assert.ok(err instanceof ApiError);
      assert.equal(err.status, 422);
      assert.equal(err.feature, "Water content");
      return true;
    },
  );
});

test("400 becomes ApiError without feature detail", async () => {
  const { client } = clientWith({
    "/predict": { status: 400, body: { error: "malformed JSON body" } },
  });
  await assert.rejects(
    () => client.predict({}),
    (err: unknown) => err instanceof ApiError && err.status === 400 && err.feature === null,
  );
});

test("explain parses attributions", async () => {
  const body = {
    explanations: {
      Porosity: { base_value: 2.0, contributions: { "Cement content": 0.5 }, prediction: 2.5 },
    },
    warnings: [],
  };
  const { client } = clientWith({ "/explain": { status: 200, body } });
  const res = await client.explain({ "Cement content": 700 });
  assert.equal(res.explanations["Porosity"]!.prediction, 2.5);
});
