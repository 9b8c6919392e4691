/* tslint:disable */
/* eslint-disable */

/**
 * Cosine distance between the feature vectors of two IR modules.
 */
export function feature_distance(ir_a: string, ir_b: string): number;

/**
 * Feature table for an IR module: `[{name, value}, ...]`.
 */
export function features(ir: string): string;

/**
 * Speed distribution over rearrangements of one order.
 */
export function permutation_study(model_json: string, order_text: string, count: number, seed: bigint, bucket_width: number): string;

/**
 * Random exploration against a simulated kernel.
 */
export function simulate_exploration(model_json: string, catalog_text: string, num_sequences: number, max_len: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly feature_distance: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly features: (a: number, b: number) => [number, number, number, number];
    readonly permutation_study: (a: number, b: number, c: number, d: number, e: number, f: bigint, g: number) => [number, number, number, number];
    readonly simulate_exploration: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
